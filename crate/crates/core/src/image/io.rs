//! 8-bit PNG and binary PNM (P5/P6) reading and writing.

use std::fs::File;
use std::io::{BufWriter, Read};
use std::path::Path;

use super::{quantize, GrayImage, Image, ImageError, Mask};

const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];

/// Anything that can be written as an 8-bit raster.
pub trait Raster {
    fn dims(&self) -> (usize, usize, usize);
    /// Interleaved 8-bit samples, row-major.
    fn to_bytes(&self) -> Vec<u8>;
}

impl Raster for Image {
    fn dims(&self) -> (usize, usize, usize) {
        (self.height(), self.width(), self.channels())
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.data().iter().map(|&v| quantize(v)).collect()
    }
}

impl Raster for GrayImage {
    fn dims(&self) -> (usize, usize, usize) {
        (self.height(), self.width(), 1)
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.data().iter().map(|&v| quantize(v)).collect()
    }
}

impl Raster for Mask {
    fn dims(&self) -> (usize, usize, usize) {
        (self.height(), self.width(), 1)
    }

    /// Raindrop pixels serialize as 255 (white), background as 0.
    fn to_bytes(&self) -> Vec<u8> {
        self.data().iter().map(|&v| if v != 0 { 255 } else { 0 }).collect()
    }
}

struct RawRaster {
    height: usize,
    width: usize,
    channels: usize,
    bytes: Vec<u8>,
}

fn read_raw(path: &Path) -> Result<RawRaster, ImageError> {
    let mut file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => ImageError::Missing(path.to_path_buf()),
        _ => ImageError::Io {
            path: path.to_path_buf(),
            source: e,
        },
    })?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf).map_err(|e| ImageError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    if buf.starts_with(&PNG_SIGNATURE) {
        decode_png(&buf)
    } else if buf.starts_with(b"P5") || buf.starts_with(b"P6") {
        decode_pnm(&buf)
    } else if buf.len() >= 2 && buf[0] == b'P' && buf[1].is_ascii_digit() {
        Err(ImageError::CorruptHeader(format!(
            "PNM variant P{} is not supported (only binary P5/P6)",
            buf[1] as char
        )))
    } else {
        Err(ImageError::UnknownFormat(path.to_path_buf()))
    }
}

/// Reads an 8-bit gray or RGB PNG/PGM/PPM. Intensities are `byte / 255`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image, ImageError> {
    let raw = read_raw(path.as_ref())?;
    let data = raw.bytes.iter().map(|&b| b as f64 / 255.0).collect();
    Image::from_vec(raw.height, raw.width, raw.channels, data)
}

/// Reads a single-channel mask file holding only 0 and 255.
pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask, ImageError> {
    let raw = read_raw(path.as_ref())?;
    if raw.channels != 1 {
        return Err(ImageError::UnsupportedColorType(
            "masks must be single-channel".into(),
        ));
    }
    let data = raw
        .bytes
        .iter()
        .map(|&b| match b {
            0 => Ok(0),
            255 => Ok(1),
            other => Err(ImageError::InvalidMask(other)),
        })
        .collect::<Result<Vec<u8>, _>>()?;
    Mask::from_vec(raw.height, raw.width, data)
}

/// Writes `img` as PNG (`.png`) or binary PNM (`.pgm` / `.ppm` / `.pnm`).
pub fn save_image<R: Raster + ?Sized>(img: &R, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let (h, w, c) = img.dims();
    let bytes = img.to_bytes();
    let write_err = |e: std::io::Error| ImageError::Write {
        path: path.to_path_buf(),
        source: e,
    };
    match ext.as_str() {
        "png" => {
            let file = File::create(path).map_err(write_err)?;
            let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
            enc.set_color(if c == 3 {
                png::ColorType::Rgb
            } else {
                png::ColorType::Grayscale
            });
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc
                .write_header()
                .map_err(|e| write_err(std::io::Error::other(e)))?;
            writer
                .write_image_data(&bytes)
                .map_err(|e| write_err(std::io::Error::other(e)))?;
            writer
                .finish()
                .map_err(|e| write_err(std::io::Error::other(e)))?;
            Ok(())
        }
        "pgm" | "ppm" | "pnm" => {
            if (ext == "pgm" && c != 1) || (ext == "ppm" && c != 3) {
                return Err(ImageError::DimensionMismatch(format!(
                    "{c}-channel raster cannot be written as .{ext}"
                )));
            }
            let magic = if c == 3 { "P6" } else { "P5" };
            let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
            out.extend_from_slice(&bytes);
            std::fs::write(path, out).map_err(write_err)
        }
        _ => Err(ImageError::UnknownFormat(path.to_path_buf())),
    }
}

fn decode_png(buf: &[u8]) -> Result<RawRaster, ImageError> {
    let mut decoder = png::Decoder::new(buf);
    // Palette and sub-byte gray expand to 8 bits; 16-bit stays and is rejected.
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder
        .read_info()
        .map_err(|e| ImageError::CorruptHeader(e.to_string()))?;
    let info = reader.info();
    if info.bit_depth == png::BitDepth::Sixteen {
        return Err(ImageError::UnsupportedBitDepth(16));
    }
    let mut out = vec![0; reader.output_buffer_size()];
    let frame = reader
        .next_frame(&mut out)
        .map_err(|e| ImageError::CorruptHeader(e.to_string()))?;
    if frame.bit_depth != png::BitDepth::Eight {
        return Err(ImageError::UnsupportedBitDepth(frame.bit_depth as u32));
    }
    let channels = match frame.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => return Err(ImageError::UnsupportedColorType(format!("{other:?}"))),
    };
    out.truncate(frame.buffer_size());
    Ok(RawRaster {
        height: frame.height as usize,
        width: frame.width as usize,
        channels,
        bytes: out,
    })
}

fn decode_pnm(buf: &[u8]) -> Result<RawRaster, ImageError> {
    let channels = if buf[1] == b'6' { 3 } else { 1 };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        *field = next_header_number(buf, &mut pos)?;
    }
    // Exactly one whitespace byte separates the header from the samples.
    if pos >= buf.len() || !buf[pos].is_ascii_whitespace() {
        return Err(ImageError::CorruptHeader(
            "missing separator after maxval".into(),
        ));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 65535 {
        return Err(ImageError::CorruptHeader(format!("maxval {maxval}")));
    }
    if maxval != 255 {
        let bits = (usize::BITS - maxval.leading_zeros()) as u32;
        return Err(ImageError::UnsupportedBitDepth(bits));
    }
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| ImageError::CorruptHeader("dimensions overflow".into()))?;
    let body = &buf[pos..];
    if body.len() < expected {
        return Err(ImageError::CorruptHeader(format!(
            "expected {expected} sample bytes, found {}",
            body.len()
        )));
    }
    Ok(RawRaster {
        height,
        width,
        channels,
        bytes: body[..expected].to_vec(),
    })
}

fn next_header_number(buf: &[u8], pos: &mut usize) -> Result<usize, ImageError> {
    loop {
        match buf.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while let Some(&b) = buf.get(*pos) {
                    *pos += 1;
                    if b == b'\n' {
                        break;
                    }
                }
            }
            Some(_) => break,
            None => return Err(ImageError::CorruptHeader("truncated header".into())),
        }
    }
    let start = *pos;
    while buf.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    if start == *pos {
        return Err(ImageError::CorruptHeader(format!(
            "expected a number at byte {start}"
        )));
    }
    std::str::from_utf8(&buf[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ImageError::CorruptHeader("header number out of range".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ppm(w: usize, h: usize, fill: u8) -> Vec<u8> {
        let mut v = format!("P6\n{w} {h}\n255\n").into_bytes();
        v.extend(std::iter::repeat(fill).take(w * h * 3));
        v
    }

    #[test]
    fn ppm_scaling() {
        let dir = tempfile::tempdir().unwrap();
        for (fill, expect) in [(255u8, 1.0), (0, 0.0), (128, 128.0 / 255.0)] {
            let p = dir.path().join(format!("f{fill}.ppm"));
            std::fs::write(&p, ppm(2, 2, fill)).unwrap();
            let img = load_image(&p).unwrap();
            assert_eq!((img.height(), img.width(), img.channels()), (2, 2, 3));
            assert!(img.data().iter().all(|&v| v == expect));
        }
        assert!((128.0f64 / 255.0 - 0.50196).abs() < 1e-5);
    }

    #[test]
    fn distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let missing = load_image(dir.path().join("nope.png")).unwrap_err();
        assert!(matches!(missing, ImageError::Missing(_)));

        let deep = dir.path().join("deep.pgm");
        let mut bytes = b"P5\n1 1\n65535\n".to_vec();
        bytes.extend([0, 0]);
        std::fs::write(&deep, bytes).unwrap();
        assert!(matches!(
            load_image(&deep).unwrap_err(),
            ImageError::UnsupportedBitDepth(16)
        ));

        let corrupt = dir.path().join("bad.ppm");
        std::fs::write(&corrupt, b"P6\nfoo 2\n255\n").unwrap();
        let err = load_image(&corrupt).unwrap_err();
        assert!(matches!(err, ImageError::CorruptHeader(_)));

        let truncated = dir.path().join("short.ppm");
        std::fs::write(&truncated, b"P6\n4 4\n255\n\x00\x00").unwrap();
        assert!(matches!(
            load_image(&truncated).unwrap_err(),
            ImageError::CorruptHeader(_)
        ));

        let codes = [
            missing.code(),
            ImageError::UnsupportedBitDepth(16).code(),
            err.code(),
        ];
        assert!(codes[0] != codes[1] && codes[1] != codes[2] && codes[0] != codes[2]);
    }

    #[test]
    fn sixteen_bit_png_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("deep.png");
        let file = File::create(&p).unwrap();
        let mut enc = png::Encoder::new(BufWriter::new(file), 1, 1);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut w = enc.write_header().unwrap();
        w.write_image_data(&[1, 2]).unwrap();
        drop(w);
        assert!(matches!(
            load_image(&p).unwrap_err(),
            ImageError::UnsupportedBitDepth(16)
        ));
    }

    #[test]
    fn pnm_comments_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.pgm");
        std::fs::write(&p, b"P5\n# made by hand\n2 1\n255\n\x00\xff").unwrap();
        let img = load_image(&p).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0]);
    }

    #[test]
    fn mask_bytes_are_0_and_255() {
        let dir = tempfile::tempdir().unwrap();
        let m = Mask::from_fn(2, 2, |r, c| r == c);
        for ext in ["pgm", "png"] {
            let p = dir.path().join(format!("m.{ext}"));
            save_image(&m, &p).unwrap();
            let raw = read_raw(&p).unwrap();
            assert_eq!(raw.bytes, vec![255, 0, 0, 255]);
            assert_eq!(load_mask(&p).unwrap(), m);
        }
    }

    #[test]
    fn unwritable_path() {
        let err = save_image(&Mask::new(1, 1), "/nonexistent-dir/x/m.png").unwrap_err();
        assert!(matches!(err, ImageError::Write { .. }));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn round_trip_is_bit_exact(
            h in 1usize..6,
            w in 1usize..6,
            rgb in any::<bool>(),
            seed in any::<u64>(),
            png_fmt in any::<bool>(),
        ) {
            let c = if rgb { 3 } else { 1 };
            let mut s = seed;
            let img = Image::from_fn(h, w, c, |_, _, _| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 56) as u8) as f64 / 255.0
            });
            let dir = tempfile::tempdir().unwrap();
            let ext = match (png_fmt, rgb) {
                (true, _) => "png",
                (false, true) => "ppm",
                (false, false) => "pgm",
            };
            let p = dir.path().join(format!("x.{ext}"));
            save_image(&img, &p).unwrap();
            prop_assert_eq!(load_image(&p).unwrap(), img);
        }
    }
}
