//! Built-in desk-scale lexicon.

/// English-like words of length 2 to 10.
pub const WORDS: [&str; 200] = [
    "be", "go", "do", "up", "we", "it", "on", "at", "the", "and", "for", "are", "but", "not",
    "you", "all", "any", "can", "had", "her", "was", "one", "our", "out", "day", "get", "has",
    "him", "his", "how", "man", "new", "now", "old", "see", "two", "way", "who", "boy", "did",
    "its", "let", "put", "say", "she", "too", "use", "cat", "dog", "sun", "sea", "red", "car",
    "bus", "map", "cup", "key", "box", "ice", "art", "oil", "pen", "egg", "time", "word",
    "city", "home", "fire", "tree", "book", "door", "hand", "king", "road", "ship", "rain",
    "snow", "wind", "star", "moon", "fish", "bird", "blue", "gold", "iron", "milk", "salt",
    "wood", "wall", "farm", "lamp", "coin", "ring", "bank", "park", "shop", "table", "water",
    "house", "light", "paper", "green", "river", "stone", "glass", "music", "money", "night",
    "plant", "sugar", "bread", "chair", "horse", "train", "apple", "earth", "field", "heart",
    "smile", "dream", "garden", "winter", "summer", "market", "coffee", "letter", "family",
    "school", "bridge", "window", "forest", "yellow", "silver", "animal", "doctor", "flower",
    "mother", "father", "friend", "number", "orange", "people", "simple", "travel", "nature",
    "public", "course", "street", "office", "island", "planet", "rocket", "castle", "butter",
    "corner", "machine", "kitchen", "picture", "morning", "evening", "country", "history",
    "library", "station", "weather", "student", "teacher", "college", "chicken", "diamond",
    "village", "monster", "mountain", "computer", "building", "elephant", "sandwich",
    "hospital", "airplane", "children", "question", "vacation", "daughter", "shoulder",
    "dinosaur", "treasure", "umbrella", "adventure", "furniture", "chocolate", "newspaper",
    "breakfast", "telephone", "direction", "universe", "beautiful", "wonderful", "advisory",
    "guide", "today",
];

/// Digit strings.
pub const NUMBERS: [&str; 20] = [
    "1869", "2024", "1999", "42", "7", "365", "1000", "2048", "314", "911", "88", "123", "404",
    "500", "2001", "77", "16", "1776", "64", "90210",
];
