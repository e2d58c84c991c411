//! Binary PPM/PGM images and the `labels.tsv` dataset directory layout.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::synthdata::Sample;

pub const LABELS_FILE: &str = "labels.tsv";

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes an `[H, W, 3]` tensor as binary PPM.
pub fn encode_ppm(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let &[h, w, 3] = image.shape() else {
        return Err(Error::dim("ppm", format!("expected [H, W, 3], got {:?}", image.shape())));
    };
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend(image.data().iter().map(|&v| to_byte(v)));
    Ok(out)
}

/// Encodes row-major 8-bit gray values as binary PGM.
pub fn encode_pgm(width: usize, height: usize, gray: &[u8]) -> Vec<u8> {
    assert_eq!(gray.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(gray);
    out
}

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let fail = |offset: usize, detail: &str| Error::Format {
        offset: offset as u64,
        detail: detail.to_string(),
    };
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(fail(0, "missing P6/P5 magic"));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|b| *b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(fail(pos, "truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| fail(start, "expected a decimal header field"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(fail(pos, "expected whitespace after maxval"));
    }
    if fields[2] != 255 {
        return Err(fail(pos, "only maxval 255 is supported"));
    }
    Ok(Header {
        magic,
        width: fields[0],
        height: fields[1],
        data_start: pos + 1,
    })
}

/// Decodes a binary PPM into an `[H, W, 3]` tensor scaled to `[0, 1]`.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let h = parse_header(bytes)?;
    if &h.magic != b"P6" {
        return Err(Error::Format {
            offset: 0,
            detail: "not a binary PPM (P6)".into(),
        });
    }
    let n = h.width * h.height * 3;
    let body = &bytes[h.data_start..];
    if body.len() != n {
        return Err(Error::Format {
            offset: (h.data_start + body.len().min(n)) as u64,
            detail: format!("expected {n} pixel bytes, found {}", body.len()),
        });
    }
    Tensor::from_vec(
        &[h.height, h.width, 3],
        body.iter().map(|&b| b as f32 / 255.0).collect(),
    )
}

pub fn read_ppm(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes)
}

pub fn write_ppm(path: &Path, image: &Tensor<f32>) -> Result<()> {
    fs::write(path, encode_ppm(image)?).map_err(|e| Error::io(path, e))
}

/// Lowercases and keeps only alphabet characters.
pub fn normalize_label(raw: &str) -> String {
    raw.chars()
        .flat_map(char::to_lowercase)
        .filter(|c| crate::tokenizers::is_alphabet_char(*c))
        .collect()
}

/// Writes `dir/labels.tsv` plus one `NNNNNN.ppm` per sample.
pub fn write_dataset(dir: &Path, samples: &[Sample]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tsv = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let name = format!("{i:06}.ppm");
        write_ppm(&dir.join(&name), &s.image)?;
        writeln!(tsv, "{name}\t{}", s.label).expect("write to vec");
    }
    let path = dir.join(LABELS_FILE);
    fs::write(&path, tsv).map_err(|e| Error::io(&path, e))
}

/// Reads a dataset directory. Labels are normalized; rows whose label
/// normalizes to nothing are skipped. The seed of loaded samples is their row
/// index.
pub fn read_dataset(dir: &Path) -> Result<Vec<Sample>> {
    let path = dir.join(LABELS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (file, raw) = line.split_once('\t').ok_or_else(|| {
            Error::Corpus(format!("{}:{}: expected `file<TAB>label`", path.display(), i + 1))
        })?;
        let label = normalize_label(raw);
        if label.is_empty() {
            log::warn!("skipping {file}: label {raw:?} has no alphanumeric characters");
            continue;
        }
        let image = read_ppm(&dir.join(file))?;
        out.push(Sample {
            image,
            label,
            seed: i as u64,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::render;

    #[test]
    fn ppm_round_trip_is_exact_for_rendered_images() {
        let s = render("guide", 4, false).unwrap();
        let bytes = encode_ppm(&s.image).unwrap();
        assert!(bytes.starts_with(b"P6\n128 32\n255\n"));
        assert_eq!(decode_ppm(&bytes).unwrap(), s.image);
    }

    #[test]
    fn header_comments_and_errors() {
        let img = decode_ppm(b"P6 # c\n1 1\n255\n\x00\xff\x80").unwrap();
        assert_eq!(img.shape(), &[1, 1, 3]);
        assert_eq!(img.data()[1], 1.0);
        assert!(matches!(decode_ppm(b"P6\n2 1\n255\n\x00"), Err(Error::Format { .. })));
        assert!(matches!(decode_ppm(b"P5\n1 1\n255\n\x00"), Err(Error::Format { .. })));
        assert!(matches!(decode_ppm(b"P6\n1"), Err(Error::Format { .. })));
        assert!(matches!(decode_ppm(b""), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn pgm_layout() {
        assert_eq!(encode_pgm(2, 1, &[0, 255]), b"P5\n2 1\n255\n\x00\xff");
    }

    #[test]
    fn labels_are_normalized() {
        assert_eq!(normalize_label("Hello, World-42!"), "helloworld42");
        assert_eq!(normalize_label("--"), "");
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let samples: Vec<_> = ["be", "1869"]
            .iter()
            .enumerate()
            .map(|(i, w)| render(w, i as u64, false).unwrap())
            .collect();
        write_dataset(dir.path(), &samples).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in samples.iter().zip(&back) {
            assert_eq!((&a.label, &a.image), (&b.label, &b.image));
        }
    }
}
