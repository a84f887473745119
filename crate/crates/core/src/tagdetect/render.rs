//! Reference renderer for image-space tags, used to check the detector
//! against known corner positions.

use super::detector::{tag_square, Homography};
use super::dictionary::{get_bit, TagDictionary};
use crate::projection::{IntensityImage, Pixel, ProjectionParams};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TagStyle {
    pub dark: f64,
    pub bright: f64,
    /// Canvas value outside every tag's quiet zone.
    pub background: f64,
    /// Width of the bright quiet zone around the border, in cells.
    pub margin_cells: f64,
}

impl Default for TagStyle {
    fn default() -> Self {
        TagStyle {
            dark: 20.0,
            bright: 200.0,
            background: 128.0,
            margin_cells: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TagPlacement {
    pub id: u32,
    /// Image positions of tag coordinates `(0,0), (N,0), (N,N), (0,N)`.
    pub tag_corners: [(f64, f64); 4],
    pub style: TagStyle,
}

/// Reflectance of a tag at tag coordinates `(x, y)`: `Some(true)` bright,
/// `Some(false)` dark, `None` outside the tag and its quiet zone.
pub fn tag_surface(code: u64, grid_n: usize, x: f64, y: f64, margin_cells: f64) -> Option<bool> {
    let big_n = (grid_n + 2) as f64;
    if x < -margin_cells || y < -margin_cells || x >= big_n + margin_cells || y >= big_n + margin_cells
    {
        return None;
    }
    if x < 0.0 || y < 0.0 || x >= big_n || y >= big_n {
        return Some(true);
    }
    let (cx, cy) = (x.floor() as usize, y.floor() as usize);
    if cx == 0 || cy == 0 || cx == grid_n + 1 || cy == grid_n + 1 {
        return Some(false);
    }
    Some(get_bit(code, grid_n, cy - 1, cx - 1))
}

/// Area-sampled render of tags onto a `width × height` canvas. Every pixel
/// gets range 1 so the result can be fed to the detector directly.
pub fn render_tags(
    dict: &TagDictionary,
    placements: &[TagPlacement],
    width: usize,
    height: usize,
    supersample: usize,
) -> IntensityImage {
    let params = ProjectionParams {
        alpha_a: 1e-3,
        alpha_i: 1e-3,
        u_o: 0,
        v_o: 0,
        width,
        height,
    };
    let background = placements.first().map_or(128.0, |p| p.style.background);
    let square = tag_square(dict.grid_n);
    let maps: Vec<(Homography, u64, TagStyle)> = placements
        .iter()
        .filter_map(|p| {
            let to_image = Homography::from_points(&square, &p.tag_corners)?;
            Some((to_image.inverse()?, dict.code(p.id)?, p.style))
        })
        .collect();
    let s = supersample.max(1);
    let mut img = IntensityImage::empty(params);
    for v in 0..height {
        for u in 0..width {
            let mut acc = 0.0;
            for a in 0..s {
                for b in 0..s {
                    let su = u as f64 - 0.5 + (a as f64 + 0.5) / s as f64;
                    let sv = v as f64 - 0.5 + (b as f64 + 0.5) / s as f64;
                    let mut value = background;
                    for (to_tag, code, style) in &maps {
                        let (x, y) = to_tag.map(su, sv);
                        if let Some(bright) = tag_surface(*code, dict.grid_n, x, y, style.margin_cells)
                        {
                            value = if bright { style.bright } else { style.dark };
                            break;
                        }
                    }
                    acc += value;
                }
            }
            img.set(
                u,
                v,
                Some(Pixel {
                    intensity: acc / (s * s) as f64,
                    range: 1.0,
                    source_index: v * width + u,
                }),
            );
        }
    }
    img
}

/// Rotates a raster image by `quarter_turns × 90°` clockwise.
pub fn rotate_image(img: &IntensityImage, quarter_turns: usize) -> IntensityImage {
    let mut out = img.clone();
    for _ in 0..quarter_turns % 4 {
        let (w, h) = (out.width(), out.height());
        let mut params = out.params;
        params.width = h;
        params.height = w;
        params.u_o = 0;
        params.v_o = 0;
        let mut next = IntensityImage::empty(params);
        for v in 0..h {
            for u in 0..w {
                // (u, v) -> (h - 1 - v, u)
                next.set(h - 1 - v, u, out.get(u, v).copied());
            }
        }
        out = next;
    }
    out
}

/// Image position after [`rotate_image`] of a point in a `width × height` image.
pub fn rotate_point(p: (f64, f64), width: usize, height: usize, quarter_turns: usize) -> (f64, f64) {
    let (mut x, mut y) = p;
    let (mut w, mut h) = (width, height);
    for _ in 0..quarter_turns % 4 {
        let nx = h as f64 - 1.0 - y;
        let ny = x;
        x = nx;
        y = ny;
        std::mem::swap(&mut w, &mut h);
    }
    (x, y)
}
