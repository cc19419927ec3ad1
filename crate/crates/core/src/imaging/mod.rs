//! PNG rendering of image grids and partial-reconstruction panels.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::archive::write_atomic;
use crate::datasets::ShortcutDataset;
use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::vae::ChromaModel;

pub const GUTTER: usize = 2;

/// How image channels map to PNG color.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelMap {
    Grayscale,
    /// Channel 0 → red, channel 1 → green, blue ≡ 0.
    RedGreen,
    Rgb,
}

impl ChannelMap {
    pub fn channels(self) -> usize {
        match self {
            ChannelMap::Grayscale => 1,
            ChannelMap::RedGreen => 2,
            ChannelMap::Rgb => 3,
        }
    }

    pub fn for_channels(c: usize) -> Result<Self> {
        match c {
            1 => Ok(ChannelMap::Grayscale),
            2 => Ok(ChannelMap::RedGreen),
            3 => Ok(ChannelMap::Rgb),
            _ => Err(Error::contract(format!("no channel mapping for {c}-channel images"))),
        }
    }
}

/// `rows × cols` planar CHW images of one shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid {
    rows: usize,
    cols: usize,
    height: usize,
    width: usize,
    mapping: ChannelMap,
    cells: Vec<Vec<f32>>,
    row_labels: Option<Vec<String>>,
}

/// `floor(v·255 + 0.5)` after clamping to [0, 1]; NaN maps to 0.
pub fn quantize(v: f32) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v as f64 * 255.0 + 0.5).floor() as u8
}

impl ImageGrid {
    /// `cells` are row-major, each `channels·height·width` long.
    pub fn new(rows: usize, cols: usize, shape: [usize; 3], cells: Vec<Vec<f32>>) -> Result<Self> {
        let [c, height, width] = shape;
        let mapping = ChannelMap::for_channels(c)?;
        if rows == 0 || cols == 0 || height == 0 || width == 0 {
            return Err(Error::contract("image grid must be non-empty"));
        }
        if cells.len() != rows * cols {
            return Err(Error::dim("ImageGrid", &[rows, cols], &[cells.len()]));
        }
        if let Some(bad) = cells.iter().find(|cell| cell.len() != c * height * width) {
            return Err(Error::dim("ImageGrid cell", &shape, &[bad.len()]));
        }
        Ok(Self {
            rows,
            cols,
            height,
            width,
            mapping,
            cells,
            row_labels: None,
        })
    }

    /// Labels are stored as PNG text metadata.
    pub fn with_row_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.rows {
            return Err(Error::dim("row labels", &[self.rows], &[labels.len()]));
        }
        self.row_labels = Some(labels);
        Ok(self)
    }

    /// Up to `rows × cols` images of `ds`, in order from `start`.
    pub fn from_dataset(ds: &ShortcutDataset, start: usize, rows: usize, cols: usize) -> Result<Self> {
        let end = (start + rows * cols).min(ds.len());
        if start >= end {
            return Err(Error::contract("no examples in the requested range"));
        }
        let mut cells: Vec<Vec<f32>> = (start..end).map(|i| ds.images.row(i).to_vec()).collect();
        cells.resize(rows * cols, vec![1.0; ds.pixels()]);
        Self::new(rows, cols, ds.image_shape(), cells)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn mapping(&self) -> ChannelMap {
        self.mapping
    }

    /// Output size in pixels, gutters included.
    pub fn dimensions(&self) -> (usize, usize) {
        (
            self.cols * self.width + (self.cols - 1) * GUTTER,
            self.rows * self.height + (self.rows - 1) * GUTTER,
        )
    }

    fn out_channels(&self) -> usize {
        match self.mapping {
            ChannelMap::Grayscale => 1,
            _ => 3,
        }
    }

    /// Interleaved 8-bit pixels with white gutters.
    pub fn raster(&self) -> Vec<u8> {
        let (w_out, h_out) = self.dimensions();
        let oc = self.out_channels();
        let plane = self.height * self.width;
        let mut buf = vec![255u8; w_out * h_out * oc];
        for (k, cell) in self.cells.iter().enumerate() {
            let (r, c) = (k / self.cols, k % self.cols);
            let (y0, x0) = (r * (self.height + GUTTER), c * (self.width + GUTTER));
            for y in 0..self.height {
                for x in 0..self.width {
                    let at = y * self.width + x;
                    let px = ((y0 + y) * w_out + x0 + x) * oc;
                    match self.mapping {
                        ChannelMap::Grayscale => buf[px] = quantize(cell[at]),
                        ChannelMap::RedGreen => {
                            buf[px] = quantize(cell[at]);
                            buf[px + 1] = quantize(cell[plane + at]);
                            buf[px + 2] = 0;
                        }
                        ChannelMap::Rgb => {
                            for ch in 0..3 {
                                buf[px + ch] = quantize(cell[ch * plane + at]);
                            }
                        }
                    }
                }
            }
        }
        buf
    }

    /// PNG bytes; a pure function of the grid.
    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let (w, h) = self.dimensions();
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
            enc.set_color(match self.mapping {
                ChannelMap::Grayscale => png::ColorType::Grayscale,
                _ => png::ColorType::Rgb,
            });
            enc.set_depth(png::BitDepth::Eight);
            if let Some(labels) = &self.row_labels {
                enc.add_text_chunk("row-labels".into(), labels.join("\n"))
                    .map_err(|e| Error::contract(format!("png text chunk: {e}")))?;
            }
            let mut writer = enc
                .write_header()
                .map_err(|e| Error::contract(format!("png header: {e}")))?;
            writer
                .write_image_data(&self.raster())
                .map_err(|e| Error::contract(format!("png data: {e}")))?;
        }
        Ok(out)
    }
}

pub fn render_grid(grid: &ImageGrid, path: &Path) -> Result<()> {
    write_atomic(path, &grid.encode_png()?)
}

/// Original image in column 0, then `n` samples of `x̃₁` (row 1) and `x̃₂`
/// (row 2).
pub fn partial_recon_grid(model: &ChromaModel, x: &[f32], n: usize, rng: &mut RngState) -> Result<ImageGrid> {
    if n == 0 {
        return Err(Error::contract("a partial-reconstruction panel needs n ≥ 1 samples"));
    }
    let x1 = model.partial_reconstruct_1(x, rng, n)?;
    let x2 = model.partial_reconstruct_2(x, rng, n)?;
    let mut cells = Vec::with_capacity(2 * (n + 1));
    for samples in [&x1, &x2] {
        cells.push(x.to_vec());
        cells.extend((0..n).map(|i| samples.row(i).to_vec()));
    }
    ImageGrid::new(2, n + 1, model.spec.image_shape, cells)?
        .with_row_labels(vec!["original | x~1 samples".into(), "original | x~2 samples".into()])
}

pub fn partial_recon_panel(model: &ChromaModel, x: &[f32], n: usize, rng: &mut RngState, path: &Path) -> Result<()> {
    render_grid(&partial_recon_grid(model, x, n, rng)?, path)
}
