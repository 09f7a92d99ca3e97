//! Camouflage texture storage and its two on-disk forms: an 8-bit binary
//! pixmap for viewing and a float32 sidecar for exact optimizer state.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

const SIDECAR_MAGIC: &[u8; 8] = b"VDTEXF32";

/// H x W grid of RGB triples in `[0, 1]`, row-major, channel-interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct Texture {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Texture {
    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self { height, width, data: vec![value; height * width * 3] }
    }

    pub fn from_data(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::InvalidInput(format!(
                "texture data has {} values, expected {}",
                data.len(),
                height * width * 3
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidInput("texture channel outside [0, 1]".into()));
        }
        Ok(Self { height, width, data })
    }

    /// Uniform random texture, quantized to f32 like every optimizer state.
    pub fn random<R: Rng>(height: usize, width: usize, rng: &mut R) -> Self {
        let data = (0..height * width * 3).map(|_| rng.random::<f32>() as f64).collect();
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * 3 + ch
    }

    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[self.index(row, col, ch)]
    }

    pub fn set(&mut self, row: usize, col: usize, ch: usize, v: f64) {
        let i = self.index(row, col, ch);
        self.data[i] = v;
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = self.index(row, col, 0);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Clamps every channel to `[0, 1]` and rounds it to the nearest f32.
    pub fn project(&mut self) {
        for v in &mut self.data {
            *v = (v.clamp(0.0, 1.0) as f32) as f64;
        }
    }

    pub fn transposed(&self) -> Self {
        let mut out = Texture::filled(self.width, self.height, 0.0);
        for r in 0..self.height {
            for c in 0..self.width {
                for ch in 0..3 {
                    out.set(c, r, ch, self.get(r, c, ch));
                }
            }
        }
        out
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(f, "P6\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.data.iter().map(|v| (v * 255.0).round() as u8).collect();
        f.write_all(&bytes)?;
        f.flush()?;
        Ok(())
    }

    pub fn read_ppm(path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::Format { path: path.to_path_buf(), reason: reason.into() };
        let mut r = BufReader::new(std::fs::File::open(path)?);
        let mut header = Vec::new();
        // magic, width, height, maxval; '#' comments allowed between tokens
        while header.len() < 4 {
            let mut line = String::new();
            if r.read_line(&mut line)? == 0 {
                return Err(bad("truncated header"));
            }
            let line = line.split('#').next().unwrap_or("");
            header.extend(line.split_whitespace().map(str::to_owned));
        }
        if header[0] != "P6" {
            return Err(bad("not a binary P6 pixmap"));
        }
        let width: usize = header[1].parse().map_err(|_| bad("bad width"))?;
        let height: usize = header[2].parse().map_err(|_| bad("bad height"))?;
        if header[3] != "255" {
            return Err(bad("only 8-bit pixmaps are supported"));
        }
        let mut bytes = vec![0u8; width * height * 3];
        r.read_exact(&mut bytes)?;
        let data = bytes.iter().map(|b| *b as f64 / 255.0).collect();
        Ok(Self { height, width, data })
    }

    /// Raw little-endian float32 grid behind a 16-byte header
    /// (8-byte magic, u32 height, u32 width).
    pub fn write_sidecar(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(16 + self.data.len() * 4);
        buf.extend_from_slice(SIDECAR_MAGIC);
        buf.extend_from_slice(&(self.height as u32).to_le_bytes());
        buf.extend_from_slice(&(self.width as u32).to_le_bytes());
        for v in &self.data {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn read_sidecar(path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::Format { path: path.to_path_buf(), reason: reason.into() };
        let bytes = std::fs::read(path)?;
        if bytes.len() < 16 || &bytes[..8] != SIDECAR_MAGIC {
            return Err(bad("missing sidecar magic"));
        }
        let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let width = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let body = &bytes[16..];
        if body.len() != height * width * 3 * 4 {
            return Err(bad("payload size does not match header"));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Self::from_data(height, width, data).map_err(|_| bad("channel outside [0, 1]"))
    }
}
