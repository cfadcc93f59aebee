//! Label maps as 8-bit indexed PNG with a fixed palette.

use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor};
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{Grid, LabelGrid};

pub const LABEL_PALETTE_SIZE: usize = 256;

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::Parse(format!("png: {e}"))
}

/// Palette entry for a label, using the bit-interleaved color map common in
/// segmentation tooling. Label 0 is black.
pub fn label_color(label: u8) -> [u8; 3] {
    let mut rgb = [0u8; 3];
    let mut c = label;
    for shift in (0..8).rev() {
        for (ch, out) in rgb.iter_mut().enumerate() {
            *out |= ((c >> ch) & 1) << shift;
        }
        c >>= 3;
    }
    rgb
}

fn palette() -> Vec<u8> {
    (0..LABEL_PALETTE_SIZE).flat_map(|l| label_color(l as u8)).collect()
}

pub fn encode_label_png(labels: &LabelGrid) -> Result<Vec<u8>> {
    let (w, h) = labels.dims();
    let data: Vec<u8> = labels
        .as_slice()
        .iter()
        .map(|&l| u8::try_from(l).map_err(|_| Error::ParamOutOfRange(format!("label {l} does not fit an 8-bit PNG"))))
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(png::ColorType::Indexed);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_palette(palette());
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(&data).map_err(png_err)?;
        writer.finish().map_err(png_err)?;
    }
    Ok(out)
}

/// Decodes indexed or grayscale (8 or 16 bit) PNG samples as label ids.
/// The background label is 0.
pub fn decode_label_png<R: std::io::BufRead + std::io::Seek>(r: R) -> Result<LabelGrid> {
    let mut dec = png::Decoder::new(r);
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec.read_info().map_err(png_err)?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| png_err("image too large"))?];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let labels: Vec<u16> = match (info.color_type, info.bit_depth) {
        (png::ColorType::Indexed | png::ColorType::Grayscale, png::BitDepth::Eight) => {
            (0..h).flat_map(|y| buf[y * info.line_size..y * info.line_size + w].iter().map(|&b| b as u16)).collect()
        }
        (png::ColorType::Grayscale, png::BitDepth::Sixteen) => (0..h)
            .flat_map(|y| {
                let row = &buf[y * info.line_size..y * info.line_size + 2 * w];
                row.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]))
            })
            .collect(),
        (ct, bd) => return Err(Error::Parse(format!("unsupported label PNG format {ct:?}/{bd:?}"))),
    };
    Ok(LabelGrid::new(Grid::from_vec(w, h, labels)?, 0))
}

pub fn write_label_png(labels: &LabelGrid, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_label_png(labels)?)?;
    Ok(())
}

pub fn read_label_png(path: impl AsRef<Path>) -> Result<LabelGrid> {
    decode_label_png(BufReader::new(File::open(path)?))
}

pub fn decode_label_png_bytes(bytes: &[u8]) -> Result<LabelGrid> {
    decode_label_png(Cursor::new(bytes))
}

pub(crate) fn write_png_rgb(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, width as u32, height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(rgb).map_err(png_err)?;
    writer.finish().map_err(png_err)?;
    Ok(())
}
