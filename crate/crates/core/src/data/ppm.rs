//! Binary PPM (P6) codec, the crate's sole image format.
//!
//! Header parsing tolerates whitespace runs and `#` comments between tokens,
//! per the netpbm grammar. Only maxval 255 is accepted.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    fn skip_filler(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b' ' | b'\t' | b'\r' | b'\n' => self.pos += 1,
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn token(&mut self) -> Result<&'a [u8]> {
        self.skip_filler();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::PpmHeader {
                reason: "unexpected end of header".into(),
            });
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self, what: &str) -> Result<u64> {
        let tok = self.token()?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::PpmHeader {
                reason: format!("{what} is not a number: {:?}", String::from_utf8_lossy(tok)),
            })
    }
}

/// Decode binary P6 bytes to an [H,W,3] tensor of f32 in [0,1].
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    let mut cur = HeaderCursor { bytes, pos: 0 };
    let magic = cur.token()?;
    if magic != b"P6" {
        return Err(Error::PpmBadMagic {
            got: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let width = cur.number("width")? as usize;
    let height = cur.number("height")? as usize;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(Error::PpmBadMaxval { got: maxval });
    }
    if width == 0 || height == 0 {
        return Err(Error::ZeroSizedImage);
    }
    // Exactly one whitespace byte separates the header from pixel data.
    if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
        return Err(Error::PpmHeader {
            reason: "missing whitespace after maxval".into(),
        });
    }
    cur.pos += 1;
    let expected = width * height * 3;
    let body = &bytes[cur.pos..];
    if body.len() < expected {
        return Err(Error::PpmTruncated {
            expected,
            actual: body.len(),
        });
    }
    let data: Vec<f32> = body[..expected].iter().map(|&b| b as f32 / 255.0).collect();
    Tensor::from_vec(&[height, width, 3], data)
}

/// Encode an [H,W,3] tensor of f32 in [0,1] as binary P6 bytes.
pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = match image.shape() {
        [h, w, 3] => (*h, *w),
        s => {
            return Err(Error::ShapeMismatch {
                op: "encode_ppm",
                expected: vec![0, 0, 3],
                got: s.to_vec(),
            })
        }
    };
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for &v in image.as_f32()? {
        out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    Ok(out)
}
