//! Netpbm grayscale (P2/P5) and color (P3/P6) images.

use std::io::Write;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// 1 for PGM, 3 for PPM.
    pub channels: usize,
    pub maxval: u16,
    /// Row-major, channel-interleaved samples.
    pub samples: Vec<u16>,
}

impl Image {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        maxval: u16,
        samples: Vec<u16>,
    ) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::shape(format!(
                "netpbm supports 1 or 3 channels, got {channels}"
            )));
        }
        if maxval == 0 {
            return Err(Error::Parse("maxval must be positive".into()));
        }
        if samples.len() != width * height * channels {
            return Err(Error::shape(format!(
                "{} samples for a {width}x{height}x{channels} image",
                samples.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            maxval,
            samples,
        })
    }

    pub fn sample(&self, x: usize, y: usize, c: usize) -> u16 {
        self.samples[(y * self.width + x) * self.channels + c]
    }

    /// Binary (P5/P6) encoding; 16-bit big-endian samples when maxval > 255.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        write!(
            w,
            "{magic}\n{} {}\n{}\n",
            self.width, self.height, self.maxval
        )?;
        if self.maxval > 255 {
            let mut buf = Vec::with_capacity(self.samples.len() * 2);
            for s in &self.samples {
                buf.extend_from_slice(&s.to_be_bytes());
            }
            w.write_all(&buf)?;
        } else {
            let buf: Vec<u8> = self.samples.iter().map(|&s| s as u8).collect();
            w.write_all(&buf)?;
        }
        Ok(())
    }

    /// Plain (P2/P3) encoding, one image row per line.
    pub fn write_ascii<W: Write>(&self, mut w: W) -> Result<()> {
        let magic = if self.channels == 1 { "P2" } else { "P3" };
        writeln!(
            w,
            "{magic}\n{} {}\n{}",
            self.width, self.height, self.maxval
        )?;
        let row_len = self.width * self.channels;
        for row in self.samples.chunks(row_len.max(1)) {
            let line: Vec<String> = row.iter().map(u16::to_string).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_binary(&mut buf)
            .expect("writing to a Vec cannot fail");
        buf
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Parse(format!("expected {what} at byte {start}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|e| Error::Parse(format!("{what}: {e}")))
    }
}

/// Parses any of P2, P3, P5, P6.
pub fn decode(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(Error::Parse("not a netpbm file".into()));
    }
    let (channels, binary) = match bytes[1] {
        b'2' => (1, false),
        b'5' => (1, true),
        b'3' => (3, false),
        b'6' => (3, true),
        other => {
            return Err(Error::Parse(format!(
                "unsupported netpbm kind P{}",
                other as char
            )))
        }
    };
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")? as usize;
    let height = h.number("height")? as usize;
    let maxval = h.number("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Parse(format!("maxval {maxval} outside 1..=65535")));
    }
    let n = width * height * channels;
    let mut samples = Vec::with_capacity(n);
    if binary {
        // Exactly one whitespace byte separates the header from the raster.
        if h.pos >= bytes.len() || !bytes[h.pos].is_ascii_whitespace() {
            return Err(Error::Parse("missing whitespace before raster".into()));
        }
        let data = &bytes[h.pos + 1..];
        let wide = maxval > 255;
        let need = if wide { 2 * n } else { n };
        if data.len() < need {
            return Err(Error::Parse(format!(
                "raster truncated: {} of {need} bytes",
                data.len()
            )));
        }
        if wide {
            samples.extend(
                data[..need]
                    .chunks(2)
                    .map(|c| u16::from_be_bytes([c[0], c[1]])),
            );
        } else {
            samples.extend(data[..need].iter().map(|&b| b as u16));
        }
    } else {
        for _ in 0..n {
            samples.push(h.number("sample")? as u16);
        }
    }
    if samples.iter().any(|&s| s as u32 > maxval) {
        return Err(Error::Parse("sample exceeds maxval".into()));
    }
    Image::new(width, height, channels, maxval as u16, samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascii_gray_with_comments() {
        let img = decode(b"P2\n# comment\n2 2\n255\n0 255\n255 0\n").unwrap();
        assert_eq!(img.samples, vec![0, 255, 255, 0]);
        assert_eq!((img.width, img.height, img.channels), (2, 2, 1));
    }

    #[test]
    fn binary_round_trips() {
        for (channels, maxval) in [(1, 255), (3, 255), (1, 1000), (3, 65535)] {
            let samples: Vec<u16> = (0..4 * 3 * channels)
                .map(|i| ((i as u32 * 37) % (maxval as u32 + 1)) as u16)
                .collect();
            let img = Image::new(4, 3, channels, maxval, samples).unwrap();
            assert_eq!(decode(&img.to_bytes()).unwrap(), img);
            let mut ascii = Vec::new();
            img.write_ascii(&mut ascii).unwrap();
            assert_eq!(decode(&ascii).unwrap(), img);
        }
    }

    #[test]
    fn malformed_headers_rejected() {
        assert!(decode(b"P2\n2 2\n0\n0 0 0 0\n").is_err());
        assert!(decode(b"P7\n").is_err());
        assert!(decode(b"P5\n2 2\n255\n\x00\x01").is_err());
        assert!(decode(b"P2\n1 1\n10\n11\n").is_err());
    }
}
