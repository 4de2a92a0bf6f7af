//! PNG frames, palette-indexed masks and grayscale heatmaps.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use avs_core::types::{Palette, RgbImage};
use png::{BitDepth, ColorType, Transformations};

use crate::error::{DataError, Result};

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| DataError::io(path, e))
}

fn encoder<'a>(path: &Path, width: usize, height: usize) -> Result<png::Encoder<'a, BufWriter<File>>> {
    let file = File::create(path).map_err(|e| DataError::io(path, e))?;
    Ok(png::Encoder::new(BufWriter::new(file), width as u32, height as u32))
}

fn write_data(path: &Path, enc: png::Encoder<'_, BufWriter<File>>, data: &[u8]) -> Result<()> {
    let corrupt = |e: png::EncodingError| DataError::CorruptImage { path: path.into(), msg: e.to_string() };
    let mut writer = enc.write_header().map_err(corrupt)?;
    writer.write_image_data(data).map_err(corrupt)?;
    writer.finish().map_err(corrupt)
}

pub fn write_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    let mut enc = encoder(path, img.width, img.height)?;
    enc.set_color(ColorType::Rgb);
    enc.set_depth(BitDepth::Eight);
    write_data(path, enc, img.pixels.as_flattened())
}

pub fn write_gray(path: &Path, width: usize, height: usize, values: &[u8]) -> Result<()> {
    let mut enc = encoder(path, width, height)?;
    enc.set_color(ColorType::Grayscale);
    enc.set_depth(BitDepth::Eight);
    write_data(path, enc, values)
}

/// 8-bit indexed PNG whose PLTE holds the palette colors for ids
/// `0..=max id`.
pub fn write_indexed_mask(path: &Path, width: usize, height: usize, ids: &[u8], palette: &Palette) -> Result<()> {
    let top = palette.entries().map(|(id, _)| id).max().unwrap_or(0);
    let mut plte = Vec::with_capacity(3 * (usize::from(top) + 1));
    for id in 0..=top {
        let rgb = palette.color(id).unwrap_or(avs_core::types::palette_color(id));
        plte.extend_from_slice(&rgb);
    }
    if let Some(&bad) = ids.iter().find(|&&id| id > top) {
        return Err(DataError::PaletteMismatch { path: path.into(), msg: format!("class id {bad} not in palette") });
    }
    let mut enc = encoder(path, width, height)?;
    enc.set_color(ColorType::Indexed);
    enc.set_depth(BitDepth::Eight);
    enc.set_palette(plte);
    write_data(path, enc, ids)
}

struct Decoded {
    width: usize,
    height: usize,
    color: ColorType,
    data: Vec<u8>,
    plte: Option<Vec<u8>>,
}

fn decode(path: &Path, transform: Transformations) -> Result<Decoded> {
    let mut dec = png::Decoder::new(open(path)?);
    dec.set_transformations(transform);
    let corrupt = |e: png::DecodingError| DataError::CorruptImage { path: path.into(), msg: e.to_string() };
    let mut reader = dec.read_info().map_err(corrupt)?;
    let size = reader.output_buffer_size().ok_or_else(|| DataError::CorruptImage { path: path.into(), msg: "image too large".into() })?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(corrupt)?;
    buf.truncate(info.buffer_size());
    let plte = reader.info().palette.as_ref().map(|p| p.to_vec());
    if info.bit_depth != BitDepth::Eight {
        return Err(DataError::CorruptImage { path: path.into(), msg: format!("unsupported bit depth {:?}", info.bit_depth) });
    }
    Ok(Decoded { width: info.width as usize, height: info.height as usize, color: info.color_type, data: buf, plte })
}

/// Any 8/16-bit PNG as RGB; alpha is dropped and gray is replicated.
pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    let d = decode(path, Transformations::normalize_to_color8())?;
    let channels = match d.color {
        ColorType::Grayscale => 1,
        ColorType::GrayscaleAlpha => 2,
        ColorType::Rgb => 3,
        ColorType::Rgba => 4,
        ColorType::Indexed => unreachable!("expanded by the decoder"),
    };
    let pixels = d
        .data
        .chunks_exact(channels)
        .map(|px| if channels < 3 { [px[0]; 3] } else { [px[0], px[1], px[2]] })
        .collect();
    RgbImage::new(d.width, d.height, pixels).map_err(DataError::core(path.display().to_string()))
}

/// Class ids of a mask image. Indexed PNGs are resolved through their PLTE
/// colors, RGB through the palette, and grayscale masks as foreground
/// wherever the value is non-zero (binary subsets only).
pub fn read_mask(path: &Path, palette: &Palette, binary: bool) -> Result<(usize, usize, Vec<u8>)> {
    let d = decode(path, Transformations::STRIP_16)?;
    let mismatch = |msg: String| DataError::PaletteMismatch { path: path.into(), msg };
    let ids = match d.color {
        ColorType::Indexed => {
            let plte = d.plte.ok_or_else(|| DataError::CorruptMask { path: path.into(), msg: "indexed image without palette".into() })?;
            let mut lut = [None; 256];
            for (i, rgb) in plte.chunks_exact(3).enumerate() {
                lut[i] = palette.id_of([rgb[0], rgb[1], rgb[2]]).ok();
            }
            d.data
                .iter()
                .map(|&i| lut[usize::from(i)].ok_or_else(|| mismatch(format!("palette index {i} has no class"))))
                .collect::<Result<Vec<u8>>>()?
        }
        ColorType::Grayscale if binary => d.data.iter().map(|&v| u8::from(v > 0)).collect(),
        ColorType::Rgb | ColorType::Rgba => {
            let ch = if d.color == ColorType::Rgb { 3 } else { 4 };
            d.data
                .chunks_exact(ch)
                .map(|px| palette.id_of([px[0], px[1], px[2]]).map_err(|e| mismatch(e.to_string())))
                .collect::<Result<Vec<u8>>>()?
        }
        other => return Err(DataError::CorruptMask { path: path.into(), msg: format!("unsupported color type {other:?}") }),
    };
    Ok((d.width, d.height, ids))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexed_mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let palette = Palette::generate(&["a", "b", "c"]).unwrap();
        let ids: Vec<u8> = (0..24).map(|i| (i % 4) as u8).collect();
        write_indexed_mask(&path, 6, 4, &ids, &palette).unwrap();
        assert_eq!(read_mask(&path, &palette, false).unwrap(), (6, 4, ids));
        let other = Palette::generate(&["a"]).unwrap();
        assert!(matches!(read_mask(&path, &other, false), Err(DataError::PaletteMismatch { .. })));
    }

    #[test]
    fn rgb_round_trip_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.png");
        let img = RgbImage::new(3, 2, (0..6).map(|i| [i * 40, 255 - i * 40, 7]).collect()).unwrap();
        write_rgb(&path, &img).unwrap();
        assert_eq!(read_rgb(&path).unwrap(), img);
        assert!(matches!(read_rgb(&dir.path().join("nope.png")), Err(DataError::MissingFile(_))));
    }
}
