//! Lossless 8-bit PNG reading and writing for [`RasterFrame`]s.

use std::path::Path;

use image::{DynamicImage, ExtendedColorType, ImageFormat};
use tactile_core::frame::RasterFrame;

use crate::error::{Result, ToolError};

/// Reads a PNG as a 1-channel frame if it is grayscale, 3-channel
/// otherwise. Alpha is discarded; 16-bit images are rejected.
pub fn read_png(path: &Path) -> Result<RasterFrame> {
    let img = image::ImageReader::open(path)
        .map_err(|e| ToolError::io(path, e))?
        .with_guessed_format()
        .map_err(|e| ToolError::io(path, e))?
        .decode()
        .map_err(|source| ToolError::Image { path: path.into(), source })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let frame = match img {
        DynamicImage::ImageLuma8(buf) => RasterFrame::gray(w, h, buf.into_raw()),
        DynamicImage::ImageLumaA8(_) => RasterFrame::gray(w, h, img.to_luma8().into_raw()),
        DynamicImage::ImageRgb8(buf) => RasterFrame::new(w, h, 3, buf.into_raw()),
        DynamicImage::ImageRgba8(_) => RasterFrame::new(w, h, 3, img.to_rgb8().into_raw()),
        other => {
            return Err(ToolError::parse(path, format!("unsupported pixel format {:?}", other.color())));
        }
    };
    Ok(frame?)
}

pub fn write_png(path: &Path, frame: &RasterFrame) -> Result<()> {
    let color = match frame.channels() {
        1 => ExtendedColorType::L8,
        _ => ExtendedColorType::Rgb8,
    };
    image::save_buffer_with_format(
        path,
        frame.data(),
        frame.width() as u32,
        frame.height() as u32,
        color,
        ImageFormat::Png,
    )
    .map_err(|source| ToolError::Image { path: path.into(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_gray_and_rgb() {
        let dir = tempfile::tempdir().unwrap();
        for channels in [1, 3] {
            let data = (0..7 * 5 * channels).map(|i| (i * 13 % 256) as u8).collect();
            let frame = RasterFrame::new(7, 5, channels, data).unwrap();
            let path = dir.path().join(format!("f{channels}.png"));
            write_png(&path, &frame).unwrap();
            assert_eq!(read_png(&path).unwrap(), frame);
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(read_png(Path::new("/nonexistent/x.png")), Err(ToolError::Io { .. })));
    }
}
