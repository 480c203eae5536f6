use std::fs;
use std::io::{BufWriter, Cursor, Write};
use std::path::Path;

use png::{ColorType, Transformations};

use super::{quantize, BitDepth, ImagingError, RawImage, Result, RgbImage};
use crate::Scalar;

/// Interleaved RGB samples as decoded from an RGB PNG.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRgbImage {
    pub width: usize,
    pub height: usize,
    pub bit_depth: BitDepth,
    /// Row-major `[r, g, b, r, g, b, ...]`.
    pub pixels: Vec<u16>,
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            ImagingError::NotFound(path.to_path_buf())
        } else {
            ImagingError::Io { path: path.to_path_buf(), source }
        }
    })
}

struct Decoded {
    width: usize,
    height: usize,
    color: ColorType,
    depth: png::BitDepth,
    samples: Vec<u16>,
}

fn decode(bytes: &[u8]) -> Result<Decoded> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| ImagingError::Corrupt(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| ImagingError::Corrupt("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| ImagingError::Corrupt(e.to_string()))?;
    buf.truncate(info.buffer_size());
    let samples = match info.bit_depth {
        png::BitDepth::Eight => buf.iter().map(|&b| b as u16).collect(),
        png::BitDepth::Sixteen => buf.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect(),
        // Sub-byte depths are only legal for grayscale/palette; report them as unsupported.
        other => return Err(ImagingError::UnsupportedBitDepth(other as u8)),
    };
    Ok(Decoded {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        depth: info.bit_depth,
        samples,
    })
}

fn depth_of(d: png::BitDepth) -> Result<BitDepth> {
    match d {
        png::BitDepth::Eight => Ok(BitDepth::Eight),
        png::BitDepth::Sixteen => Ok(BitDepth::Sixteen),
        other => Err(ImagingError::UnsupportedBitDepth(other as u8)),
    }
}

/// Decodes an 8- or 16-bit grayscale PNG held in memory.
pub fn decode_gray_png(bytes: &[u8]) -> Result<RawImage> {
    let d = decode(bytes)?;
    if d.color != ColorType::Grayscale {
        return Err(ImagingError::NotGrayscale(format!("{:?}", d.color)));
    }
    RawImage::new(d.width, d.height, depth_of(d.depth)?, d.samples)
}

/// Losslessly loads a grayscale mammogram.
pub fn load_png16(path: impl AsRef<Path>) -> Result<RawImage> {
    decode_gray_png(&read_file(path.as_ref())?)
}

pub fn decode_rgb_png(bytes: &[u8]) -> Result<RawRgbImage> {
    let d = decode(bytes)?;
    if d.color != ColorType::Rgb {
        return Err(ImagingError::NotRgb(format!("{:?}", d.color)));
    }
    Ok(RawRgbImage { width: d.width, height: d.height, bit_depth: depth_of(d.depth)?, pixels: d.samples })
}

pub fn load_rgb_png(path: impl AsRef<Path>) -> Result<RawRgbImage> {
    decode_rgb_png(&read_file(path.as_ref())?)
}

fn encode(width: usize, height: usize, color: ColorType, depth: BitDepth, samples: &[u16]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(match depth {
            BitDepth::Eight => png::BitDepth::Eight,
            BitDepth::Sixteen => png::BitDepth::Sixteen,
        });
        let mut writer = enc.write_header().map_err(|e| ImagingError::Invalid(e.to_string()))?;
        let data: Vec<u8> = match depth {
            BitDepth::Eight => samples.iter().map(|&s| s as u8).collect(),
            BitDepth::Sixteen => samples.iter().flat_map(|s| s.to_be_bytes()).collect(),
        };
        writer.write_image_data(&data).map_err(|e| ImagingError::Invalid(e.to_string()))?;
    }
    Ok(out)
}

pub fn encode_gray_png(image: &RawImage) -> Result<Vec<u8>> {
    encode(image.width(), image.height(), ColorType::Grayscale, image.bit_depth(), image.pixels())
}

/// Quantizes each channel by `round(v * (2^bits - 1))` and encodes an RGB PNG.
pub fn encode_rgb_png<T: Scalar>(img: &RgbImage<T>, bit_depth: BitDepth) -> Result<Vec<u8>> {
    let n = img.width() * img.height();
    let mut samples = Vec::with_capacity(3 * n);
    let (r, g, b) = (img.channel(0), img.channel(1), img.channel(2));
    for i in 0..n {
        samples.push(quantize(r[i].f64(), bit_depth));
        samples.push(quantize(g[i].f64(), bit_depth));
        samples.push(quantize(b[i].f64(), bit_depth));
    }
    encode(img.width(), img.height(), ColorType::Rgb, bit_depth, &samples)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let io_err = |source| ImagingError::Io { path: path.to_path_buf(), source };
    let file = fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes).map_err(io_err)?;
    w.flush().map_err(io_err)
}

pub fn write_gray_png(image: &RawImage, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_gray_png(image)?)
}

pub fn write_rgb_png<T: Scalar>(img: &RgbImage<T>, path: impl AsRef<Path>, bit_depth: BitDepth) -> Result<()> {
    write_bytes(path.as_ref(), &encode_rgb_png(img, bit_depth)?)
}
