//! Dense 8-bit pixel buffers.
//!
//! Layout is row-major, channel-last: the byte for `(row, col, channel)`
//! lives at `(row * width + col) * channels + channel`. Content hashes are
//! computed over this exact byte order.

use std::fmt;
use std::io::Cursor;
use std::path::Path;

use ::image::{DynamicImage, ImageFormat};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub height: u32,
    pub width: u32,
    pub channels: u8,
}

impl Dims {
    pub const fn new(height: u32, width: u32, channels: u8) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.height as usize * self.width as usize * self.channels as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Pixels {
    dims: Dims,
    data: Vec<u8>,
}

impl fmt::Debug for Pixels {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Pixels").field("dims", &self.dims).finish_non_exhaustive()
    }
}

impl Pixels {
    pub fn new(dims: Dims, data: Vec<u8>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::BadPixelBuffer {
                dims,
                len: data.len(),
                expected: dims.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn filled(dims: Dims, value: &[u8]) -> Self {
        assert_eq!(value.len(), dims.channels as usize);
        let data = value
            .iter()
            .copied()
            .cycle()
            .take(dims.len())
            .collect::<Vec<_>>();
        Self { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn as_bytes_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.data
    }

    pub fn get(&self, row: u32, col: u32) -> &[u8] {
        let c = self.dims.channels as usize;
        let at = (row as usize * self.dims.width as usize + col as usize) * c;
        &self.data[at..at + c]
    }

    pub fn get_mut(&mut self, row: u32, col: u32) -> &mut [u8] {
        let c = self.dims.channels as usize;
        let at = (row as usize * self.dims.width as usize + col as usize) * c;
        &mut self.data[at..at + c]
    }

    /// Lossless PNG encoding. Output is a pure function of the pixels.
    pub fn encode_png(&self) -> std::result::Result<Vec<u8>, ::image::ImageError> {
        let mut out = Cursor::new(Vec::new());
        self.to_dynamic().write_to(&mut out, ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    pub fn decode_png(bytes: &[u8], path: &Path) -> Result<Self> {
        let img = ::image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(|source| {
            Error::Png {
                path: path.to_path_buf(),
                source,
            }
        })?;
        let (width, height) = (img.width(), img.height());
        let (channels, data) = match img {
            DynamicImage::ImageLuma8(b) => (1, b.into_raw()),
            DynamicImage::ImageLumaA8(b) => (2, b.into_raw()),
            DynamicImage::ImageRgb8(b) => (3, b.into_raw()),
            DynamicImage::ImageRgba8(b) => (4, b.into_raw()),
            other => (3, other.to_rgb8().into_raw()),
        };
        Pixels::new(Dims::new(height, width, channels), data)
    }

    fn to_dynamic(&self) -> DynamicImage {
        let (w, h) = (self.dims.width, self.dims.height);
        let data = self.data.clone();
        // Buffer sizes are checked at construction, so `from_raw` cannot fail.
        match self.dims.channels {
            1 => DynamicImage::ImageLuma8(::image::GrayImage::from_raw(w, h, data).unwrap()),
            2 => DynamicImage::ImageLumaA8(::image::GrayAlphaImage::from_raw(w, h, data).unwrap()),
            3 => DynamicImage::ImageRgb8(::image::RgbImage::from_raw(w, h, data).unwrap()),
            4 => DynamicImage::ImageRgba8(::image::RgbaImage::from_raw(w, h, data).unwrap()),
            c => panic!("unsupported channel count {c}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_buffer_length() {
        let err = Pixels::new(Dims::new(2, 2, 3), vec![0; 11]).unwrap_err();
        assert!(matches!(err, Error::BadPixelBuffer { expected: 12, .. }));
    }

    #[test]
    fn png_round_trip_is_lossless() {
        let data = (0..4 * 5 * 3).map(|v| (v * 7 % 256) as u8).collect();
        let px = Pixels::new(Dims::new(4, 5, 3), data).unwrap();
        let png = px.encode_png().unwrap();
        let back = Pixels::decode_png(&png, Path::new("mem")).unwrap();
        assert_eq!(back, px);
        assert_eq!(px.encode_png().unwrap(), png);
    }

    #[test]
    fn indexing_is_row_major_channel_last() {
        let data = (0..2 * 3 * 3).map(|v| v as u8).collect();
        let px = Pixels::new(Dims::new(2, 3, 3), data).unwrap();
        assert_eq!(px.get(1, 2), &[15, 16, 17]);
        assert_eq!(px.get(0, 1), &[3, 4, 5]);
    }
}
