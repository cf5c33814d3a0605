//! Minimal 8-bit image IO: binary PPM (P6) plus PNG.
//!
//! Images are H x W x 3 tensors with values in [0, 1]; 16-bit sources and
//! exotic color types are out of scope.

use std::path::Path;

use assm_core::Tensor;

use crate::error::{Result, ToolError};

fn to_bytes(img: &Tensor) -> Result<(usize, usize, Vec<u8>)> {
    if img.rank() != 3 || img.shape()[2] != 3 {
        return Err(ToolError::Config(format!(
            "expected an HxWx3 image tensor, got shape {:?}",
            img.shape()
        )));
    }
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let bytes = img
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    Ok((h, w, bytes))
}

fn from_bytes(h: usize, w: usize, channels: usize, bytes: &[u8]) -> Result<Tensor> {
    let mut data = Vec::with_capacity(h * w * 3);
    for px in bytes.chunks_exact(channels) {
        // grayscale broadcasts; alpha is dropped
        let (r, g, b) = match channels {
            1 => (px[0], px[0], px[0]),
            2 => (px[0], px[0], px[0]),
            3 => (px[0], px[1], px[2]),
            _ => (px[0], px[1], px[2]),
        };
        data.push(r as f64 / 255.0);
        data.push(g as f64 / 255.0);
        data.push(b as f64 / 255.0);
    }
    Tensor::new(&[h, w, 3], data).map_err(ToolError::Core)
}

pub fn write_ppm(path: &Path, img: &Tensor) -> Result<()> {
    let (h, w, bytes) = to_bytes(img)?;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(&bytes);
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_ppm(path: &Path) -> Result<Tensor> {
    let buf = std::fs::read(path)?;
    parse_ppm(&buf)
}

fn parse_ppm(buf: &[u8]) -> Result<Tensor> {
    let mut pos = 0usize;
    let fail = |pos: usize, what: &str| -> ToolError {
        ToolError::Format {
            offset: pos as u64,
            what: what.to_string(),
        }
    };
    let token = |pos: &mut usize| -> Result<String> {
        // skip whitespace and `#` comments between header tokens
        loop {
            while *pos < buf.len() && buf[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < buf.len() && buf[*pos] == b'#' {
                while *pos < buf.len() && buf[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < buf.len() && !buf[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(fail(start, "truncated header"));
        }
        Ok(String::from_utf8_lossy(&buf[start..*pos]).into_owned())
    };
    let magic = token(&mut pos)?;
    if magic != "P6" {
        return Err(fail(0, "not a binary PPM (P6) file"));
    }
    let w: usize = token(&mut pos)?
        .parse()
        .map_err(|_| fail(pos, "bad width"))?;
    let h: usize = token(&mut pos)?
        .parse()
        .map_err(|_| fail(pos, "bad height"))?;
    let maxval: usize = token(&mut pos)?
        .parse()
        .map_err(|_| fail(pos, "bad maxval"))?;
    if maxval != 255 {
        return Err(fail(pos, "only maxval 255 is supported"));
    }
    pos += 1; // single whitespace byte after maxval
    let need = w * h * 3;
    if buf.len() < pos + need {
        return Err(fail(buf.len(), "truncated pixel data"));
    }
    from_bytes(h, w, 3, &buf[pos..pos + need])
}

pub fn write_png(path: &Path, img: &Tensor) -> Result<()> {
    let (h, w, bytes) = to_bytes(img)?;
    let file = std::fs::File::create(path)?;
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| ToolError::Config(format!("png encode: {e}")))?;
    writer
        .write_image_data(&bytes)
        .map_err(|e| ToolError::Config(format!("png encode: {e}")))?;
    Ok(())
}

pub fn read_png(path: &Path) -> Result<Tensor> {
    let file = std::fs::File::open(path)?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| ToolError::Format {
            offset: 0,
            what: format!("png decode: {e}"),
        })?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| ToolError::Format {
        offset: 0,
        what: format!("png decode: {e}"),
    })?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(ToolError::Format {
            offset: 0,
            what: "only 8-bit PNG input is supported".to_string(),
        });
    }
    let channels = info.color_type.samples();
    from_bytes(
        info.height as usize,
        info.width as usize,
        channels,
        &buf[..info.buffer_size()],
    )
}

/// Dispatches on extension: `.png` or `.ppm`.
pub fn read_image(path: &Path) -> Result<Tensor> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("png") => read_png(path),
        Some("ppm") => read_ppm(path),
        other => Err(ToolError::Usage(format!(
            "unsupported image extension {other:?}; use .png or .ppm"
        ))),
    }
}

pub fn write_image(path: &Path, img: &Tensor) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("png") => write_png(path, img),
        Some("ppm") => write_ppm(path, img),
        other => Err(ToolError::Usage(format!(
            "unsupported image extension {other:?}; use .png or .ppm"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use assm_core::RngState;

    fn random_image(h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = RngState::new(seed);
        let mut img = Tensor::zeros(&[h, w, 3]);
        rng.fill_uniform(img.data_mut(), 0.0, 1.0);
        // snap to the 8-bit grid so round-trips are exact
        img.map(|v| (v * 255.0).round() / 255.0)
    }

    #[test]
    fn ppm_round_trip_is_exact_on_the_8bit_grid() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ppm");
        let img = random_image(5, 7, 1);
        write_ppm(&p, &img).unwrap();
        let back = read_ppm(&p).unwrap();
        assert_eq!(back.shape(), img.shape());
        assert_eq!(back.data(), img.data());
    }

    #[test]
    fn png_round_trip_is_exact_on_the_8bit_grid() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        let img = random_image(9, 4, 2);
        write_png(&p, &img).unwrap();
        let back = read_png(&p).unwrap();
        assert_eq!(back.shape(), img.shape());
        assert_eq!(back.data(), img.data());
    }

    #[test]
    fn ppm_header_errors_carry_offsets() {
        assert!(matches!(
            parse_ppm(b"P5\n2 2\n255\n"),
            Err(ToolError::Format { offset: 0, .. })
        ));
        assert!(matches!(
            parse_ppm(b"P6\n2 2\n255\nab"),
            Err(ToolError::Format { .. })
        ));
    }

    #[test]
    fn dispatch_rejects_unknown_extensions() {
        assert!(matches!(
            read_image(Path::new("a.bmp")),
            Err(ToolError::Usage(_))
        ));
    }
}
