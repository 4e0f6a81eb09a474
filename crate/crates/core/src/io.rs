//! Frame sequence container and 8-bit PGM/PPM views.
//!
//! Sequence layout (little-endian): magic `BSVDSEQ1`, u32 version, u32 T,
//! u32 C, u32 H, u32 W, then `T·C·H·W` f32 values in tensor order.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use crate::error::{config, Error, Result};
use crate::tensor::Tensor;

pub const SEQUENCE_MAGIC: &[u8; 8] = b"BSVDSEQ1";
pub const SEQUENCE_VERSION: u32 = 1;

pub fn write_sequence(frames: &[Tensor], mut out: impl Write) -> Result<()> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Config("cannot write an empty sequence".into()))?;
    if frames.iter().any(|f| f.dims() != first.dims()) {
        return config("sequence frames must share dimensions");
    }
    let (c, h, w) = first.dims();
    out.write_all(SEQUENCE_MAGIC)?;
    for v in [SEQUENCE_VERSION, frames.len() as u32, c as u32, h as u32, w as u32] {
        out.write_all(&v.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(first.len() * 4);
    for f in frames {
        buf.clear();
        buf.extend(f.data().iter().flat_map(|v| v.to_le_bytes()));
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_sequence(frames: &[Tensor], path: impl AsRef<Path>) -> Result<()> {
    write_sequence(frames, BufWriter::new(File::create(path)?))
}

fn read_exact(input: &mut impl Read, buf: &mut [u8], what: &'static str) -> Result<()> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => Error::Truncated(what),
        _ => Error::Io(e),
    })
}

fn read_u32(input: &mut impl Read) -> Result<u32> {
    let mut b = [0; 4];
    read_exact(input, &mut b, "sequence header")?;
    Ok(u32::from_le_bytes(b))
}

/// Reads a whole sequence. Values must be finite; the file must end
/// exactly after the last frame.
pub fn read_sequence(mut input: impl Read) -> Result<Vec<Tensor>> {
    let mut magic = [0; 8];
    read_exact(&mut input, &mut magic, "sequence header")?;
    if &magic != SEQUENCE_MAGIC {
        return Err(Error::BadMagic {
            what: "sequence",
            expected: "BSVDSEQ1",
        });
    }
    let version = read_u32(&mut input)?;
    if version != SEQUENCE_VERSION {
        return Err(Error::Version {
            what: "sequence",
            found: version,
            expected: SEQUENCE_VERSION,
        });
    }
    let [t, c, h, w] = [(); 4].map(|_| read_u32(&mut input)).map(|r| r.map(|v| v as usize));
    let (t, c, h, w) = (t?, c?, h?, w?);
    if t == 0 || c == 0 || h == 0 || w == 0 {
        return Err(Error::Format {
            what: "sequence",
            detail: format!("empty dimension in {t}x{c}x{h}x{w}"),
        });
    }
    let mut frames = Vec::with_capacity(t);
    let mut buf = vec![0u8; c * h * w * 4];
    for _ in 0..t {
        read_exact(&mut input, &mut buf, "sequence payload")?;
        let data = buf
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        frames.push(Tensor::new(c, h, w, data).map_err(|_| Error::NonFinite("sequence payload"))?);
    }
    let mut extra = [0u8; 1];
    if input.read(&mut extra)? != 0 {
        return Err(Error::Format {
            what: "sequence",
            detail: "trailing bytes after the last frame".into(),
        });
    }
    Ok(frames)
}

pub fn load_sequence(path: impl AsRef<Path>) -> Result<Vec<Tensor>> {
    read_sequence(BufReader::new(File::open(path)?))
}

/// Checks that every value lies in [0, 1], as required of clean and noisy
/// inputs.
pub fn check_unit_range(frames: &[Tensor]) -> Result<()> {
    for (i, f) in frames.iter().enumerate() {
        if let Some(v) = f.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return config(format!("frame {i} holds {v}, outside [0, 1]"));
        }
    }
    Ok(())
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Lossy 8-bit view of one frame: PGM for one channel, PPM of the first
/// three channels otherwise.
pub fn write_pnm(frame: &Tensor, mut out: impl Write) -> Result<()> {
    let (c, h, w) = frame.dims();
    let (tag, shown) = match c {
        1 => ("P5", 1),
        c if c >= 3 => ("P6", 3),
        _ => return config(format!("cannot view a {c}-channel frame")),
    };
    write!(out, "{tag}\n{w} {h}\n255\n")?;
    let mut px = Vec::with_capacity(h * w * shown);
    for y in 0..h {
        for x in 0..w {
            px.extend((0..shown).map(|ch| quantize(frame.get(ch, y, x))));
        }
    }
    out.write_all(&px)?;
    out.flush()?;
    Ok(())
}

pub fn save_pnm(frame: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    write_pnm(frame, BufWriter::new(File::create(path)?))
}

fn pnm_err(detail: impl Into<String>) -> Error {
    Error::Format {
        what: "pnm",
        detail: detail.into(),
    }
}

/// Reads a binary PGM (P5) or PPM (P6) with maxval 255 into [0, 1].
pub fn read_pnm(mut input: impl Read) -> Result<Tensor> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Truncated("pnm header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let c = match fields[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(pnm_err(format!("unsupported kind `{other}`"))),
    };
    let num = |s: &str| s.parse::<usize>().map_err(|_| pnm_err(format!("bad number `{s}`")));
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 255 || w == 0 || h == 0 {
        return Err(pnm_err(format!("unsupported geometry {w}x{h} maxval {maxval}")));
    }
    let raster = bytes.get(pos..pos + w * h * c).ok_or(Error::Truncated("pnm raster"))?;
    Tensor::from_fn(c, h, w, |ch, y, x| f32::from(raster[(y * w + x) * c + ch]) / 255.0)
}

pub fn load_pnm(path: impl AsRef<Path>) -> Result<Tensor> {
    read_pnm(BufReader::new(File::open(path)?))
}
