//! Planar float images and binary PPM (P6) / PGM (P5) I/O.

use std::fs;
use std::path::Path;

use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

/// Channel-major (CHW) image. Values are nominally in `[0, 1]` but are only
/// clamped when written to an 8-bit file.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || !(channels == 1 || channels == 3) {
            return Err(dim_err!("invalid image geometry {height}x{width}x{channels}"));
        }
        if data.len() != height * width * channels {
            return Err(dim_err!(
                "image {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            ));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self::new(height, width, channels, vec![value; height * width * channels])
            .expect("valid geometry")
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        &self.data[c * self.height * self.width..(c + 1) * self.height * self.width]
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width || height == 0 || width == 0 {
            return Err(dim_err!(
                "crop {height}x{width}@({top},{left}) outside {}x{} image",
                self.height,
                self.width
            ));
        }
        let mut data = Vec::with_capacity(height * width * self.channels);
        for c in 0..self.channels {
            for y in top..top + height {
                let row = (c * self.height + y) * self.width;
                data.extend_from_slice(&self.data[row + left..row + left + width]);
            }
        }
        Self::new(height, width, self.channels, data)
    }

    /// Replicates a single-channel image to three channels.
    pub fn to_rgb(&self) -> Self {
        if self.channels == 3 {
            return self.clone();
        }
        let mut data = Vec::with_capacity(self.data.len() * 3);
        for _ in 0..3 {
            data.extend_from_slice(&self.data);
        }
        Self::new(self.height, self.width, 3, data).expect("valid geometry")
    }

    /// Copy with every value clamped to `[0, 1]`.
    pub fn clamped(&self) -> Self {
        Self {
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            ..self.clone()
        }
    }

    /// `[C, H, W]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.channels, self.height, self.width], self.data.clone())
            .expect("valid geometry")
    }

    /// Accepts `[C, H, W]` or `[1, C, H, W]`.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (c, h, w) = match *t.shape() {
            [c, h, w] | [1, c, h, w] => (c, h, w),
            _ => return Err(dim_err!("cannot view tensor {:?} as an image", t.shape())),
        };
        Self::new(h, w, c, t.data().to_vec())
    }

    /// Stacks same-sized images into `[N, C, H, W]`.
    pub fn batch(images: &[Image]) -> Result<Tensor> {
        let tensors: Vec<Tensor> = images.iter().map(Image::to_tensor).collect();
        Tensor::stack(&tensors, false)
    }

    /// Splits `[N, C, H, W]` back into images.
    pub fn unbatch(t: &Tensor) -> Result<Vec<Image>> {
        let (n, ..) = t.dims4()?;
        (0..n)
            .map(|i| Image::from_tensor(&t.slice_outer(i, 1)?))
            .collect()
    }

    pub fn read_pnm(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        decode_pnm(&bytes).map_err(|e| match e {
            Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn write_pnm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode_pnm()).map_err(|e| Error::io(path, e))
    }

    /// Binary P6 for RGB, P5 for grayscale; values clamped and rounded to 8 bits.
    pub fn encode_pnm(&self) -> Vec<u8> {
        let magic = if self.channels == 3 { "P6" } else { "P5" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        let hw = self.height * self.width;
        for i in 0..hw {
            for c in 0..self.channels {
                let v = self.data[c * hw + i].clamp(0.0, 1.0);
                out.push((v * 255.0).round() as u8);
            }
        }
        out
    }
}

fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let fmt = |m: &str| Error::Format(m.to_string());
    let mut pos = 0;
    let mut next_token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(fmt("truncated PNM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let channels = match next_token()?.as_str() {
        "P6" => 3,
        "P5" => 1,
        other => return Err(Error::Format(format!("unsupported PNM magic `{other}`"))),
    };
    let mut num = || -> Result<usize> {
        next_token()?
            .parse()
            .map_err(|_| fmt("malformed PNM header number"))
    };
    let (width, height, maxval) = (num()?, num()?, num()?);
    if maxval != 255 {
        return Err(Error::Format(format!("only 8-bit PNM is supported (maxval {maxval})")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let start = pos + 1;
    let hw = width * height;
    let need = hw * channels;
    if width == 0 || height == 0 || bytes.len() < start + need {
        return Err(fmt("truncated PNM raster"));
    }
    let raster = &bytes[start..start + need];
    let mut data = vec![0.0; need];
    for i in 0..hw {
        for c in 0..channels {
            data[c * hw + i] = raster[i * channels + c] as f64 / 255.0;
        }
    }
    Image::new(height, width, channels, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pnm_round_trip_on_8bit_values() {
        let data: Vec<f64> = (0..2 * 3 * 3).map(|i| (i * 13 % 256) as f64 / 255.0).collect();
        let img = Image::new(2, 3, 3, data).unwrap();
        let back = decode_pnm(&img.encode_pnm()).unwrap();
        assert_eq!(back, img);
        let gray = Image::new(2, 2, 1, vec![0.0, 1.0, 2.0, -1.0]).unwrap();
        let back = decode_pnm(&gray.encode_pnm()).unwrap();
        assert_eq!(back.data, vec![0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 255]);
        let img = decode_pnm(&bytes).unwrap();
        assert_eq!((img.width, img.height, img.channels), (2, 1, 1));
        assert!(matches!(decode_pnm(b"P3\n1 1\n255\n0"), Err(Error::Format(_))));
    }

    #[test]
    fn crop_extracts_window() {
        let img = Image::new(3, 3, 1, (0..9).map(f64::from).collect()).unwrap();
        let c = img.crop(1, 1, 2, 2).unwrap();
        assert_eq!(c.data, vec![4.0, 5.0, 7.0, 8.0]);
        assert!(img.crop(2, 2, 2, 2).is_err());
    }
}
