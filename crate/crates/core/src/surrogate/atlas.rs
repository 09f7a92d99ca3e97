//! Assignment of texture sub-rectangles to the four body side faces.
//!
//! Layout: the top half holds the left and front faces, the bottom half the
//! right and rear faces. The column split is proportional to body length vs.
//! width so that texel density is roughly equal on every face. Glass, tires
//! and mirrors are masked out of each face.

use crate::error::{Error, Result};
use crate::scene::{Face, VehicleSpec};
use crate::surrogate::Texture;

/// One attachable texel of a face.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FaceTexel {
    /// Pixel index (row * width + col).
    pub pixel: usize,
    /// Normalized horizontal coordinate within the face, minus 0.5.
    pub du: f64,
    /// Normalized vertical coordinate within the face, minus 0.5.
    pub dv: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FaceRegion {
    pub row0: usize,
    pub rows: usize,
    pub col0: usize,
    pub cols: usize,
    pub texels: Vec<FaceTexel>,
    /// Horizontally or vertically adjacent attachable texel pairs.
    pub pairs: Vec<(usize, usize)>,
}

impl FaceRegion {
    fn build(face: Face, row0: usize, rows: usize, col0: usize, cols: usize, width: usize) -> Self {
        let mut attach = vec![false; rows * cols];
        let mut texels = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let u = (c as f64 + 0.5) / cols as f64;
                let v = (r as f64 + 0.5) / rows as f64;
                if attachable(face, u, v) {
                    attach[r * cols + c] = true;
                    texels.push(FaceTexel {
                        pixel: (row0 + r) * width + col0 + c,
                        du: u - 0.5,
                        dv: v - 0.5,
                    });
                }
            }
        }
        let mut pairs = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                if !attach[r * cols + c] {
                    continue;
                }
                let p = (row0 + r) * width + col0 + c;
                if c + 1 < cols && attach[r * cols + c + 1] {
                    pairs.push((p, p + 1));
                }
                if r + 1 < rows && attach[(r + 1) * cols + c] {
                    pairs.push((p, p + width));
                }
            }
        }
        Self { row0, rows, col0, cols, texels, pairs }
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.row0 && row < self.row0 + self.rows && col >= self.col0 && col < self.col0 + self.cols
    }
}

/// Excluded zones in normalized face coordinates (u to the right, v down).
fn attachable(face: Face, u: f64, v: f64) -> bool {
    match face {
        Face::Left | Face::Right => {
            let window = v < 0.3 && (0.2..0.8).contains(&u);
            let mirror = (0.78..0.88).contains(&u) && (0.3..0.4).contains(&v);
            let tire = v > 0.75 && ((0.1..0.28).contains(&u) || (0.72..0.9).contains(&u));
            !(window || mirror || tire)
        }
        Face::Front | Face::Rear => {
            let glass = v < 0.35 && (0.15..0.85).contains(&u);
            !glass
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FaceAtlas {
    height: usize,
    width: usize,
    regions: [FaceRegion; 4],
}

impl FaceAtlas {
    pub fn for_vehicle(spec: &VehicleSpec, height: usize, width: usize) -> Result<Self> {
        if height < 4 || width < 4 {
            return Err(Error::InvalidInput(format!("texture {height}x{width} too small for an atlas")));
        }
        let side_cols = ((width as f64) * spec.length / (spec.length + spec.width)).round() as usize;
        let side_cols = side_cols.clamp(1, width - 1);
        let end_cols = width - side_cols;
        let top = height / 2;
        let bottom = height - top;
        let regions = Face::ALL.map(|face| match face {
            Face::Left => FaceRegion::build(face, 0, top, 0, side_cols, width),
            Face::Front => FaceRegion::build(face, 0, top, side_cols, end_cols, width),
            Face::Right => FaceRegion::build(face, top, bottom, 0, side_cols, width),
            Face::Rear => FaceRegion::build(face, top, bottom, side_cols, end_cols, width),
        });
        Ok(Self { height, width, regions })
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn region(&self, face: Face) -> &FaceRegion {
        &self.regions[face as usize]
    }

    pub fn check_texture(&self, texture: &Texture) -> Result<()> {
        if texture.resolution() != (self.height, self.width) {
            return Err(Error::InvalidInput(format!(
                "texture {:?} does not match atlas {:?}",
                texture.resolution(),
                (self.height, self.width)
            )));
        }
        Ok(())
    }

    /// Resamples every face of `texture` (laid out by `self`) into the face
    /// rectangles of `target`, nearest-neighbour.
    pub fn remap(&self, texture: &Texture, target: &FaceAtlas) -> Result<Texture> {
        self.check_texture(texture)?;
        let mut out = Texture::filled(target.height, target.width, 0.5);
        for face in Face::ALL {
            let src = self.region(face);
            let dst = target.region(face);
            for r in 0..dst.rows {
                let sr = src.row0 + ((r as f64 + 0.5) * src.rows as f64 / dst.rows as f64) as usize;
                for c in 0..dst.cols {
                    let sc = src.col0 + ((c as f64 + 0.5) * src.cols as f64 / dst.cols as f64) as usize;
                    for ch in 0..3 {
                        out.set(dst.row0 + r, dst.col0 + c, ch, texture.get(sr, sc, ch));
                    }
                }
            }
        }
        Ok(out)
    }
}
