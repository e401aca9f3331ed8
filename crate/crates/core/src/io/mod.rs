//! On-disk formats: HMTK tensors, PNG frames and scene bundle directories.

pub mod bundle;
pub mod hmtk;

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::Image;

pub use bundle::{load_bundle, read_manifest, save_bundle, BundleManifest};

/// Lowercase hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes an 8-bit RGB or RGBA PNG of the clamped image.
pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    let color = match img.channels {
        3 => png::ColorType::Rgb,
        4 => png::ColorType::Rgba,
        c => return Err(Error::Shape(format!("PNG output needs 3 or 4 channels, got {c}"))),
    };
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut enc = png::Encoder::new(file, img.width as u32, img.height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let fmt = |e: png::EncodingError| Error::Format(format!("{}: {e}", path.display()));
    let mut w = enc.write_header().map_err(fmt)?;
    w.write_image_data(&img.to_u8()).map_err(fmt)?;
    w.finish().map_err(fmt)?;
    Ok(())
}

/// Reads an 8-bit RGB or RGBA PNG into `[0, 1]` floats.
pub fn read_png(path: &Path) -> Result<Image> {
    let file = std::io::BufReader::new(
        std::fs::File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?,
    );
    let fmt = |e: png::DecodingError| Error::Format(format!("{}: {e}", path.display()));
    let mut reader = png::Decoder::new(file).read_info().map_err(fmt)?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(fmt)?;
    let channels = match (info.color_type, info.bit_depth) {
        (png::ColorType::Rgb, png::BitDepth::Eight) => 3,
        (png::ColorType::Rgba, png::BitDepth::Eight) => 4,
        other => return Err(Error::Format(format!("{}: unsupported PNG {other:?}", path.display()))),
    };
    buf.truncate(info.buffer_size());
    Image::new(
        info.width as usize,
        info.height as usize,
        channels,
        buf.iter().map(|&b| b as f64 / 255.0).collect(),
    )
}
