//! Uniform 2D grids over the room floor and their text form.

use std::io::{BufRead, Write};

use crate::error::{invalid, Error, Result};
use crate::geometry::Point2;
use crate::scenario::Room;

/// Row-major samples: `values[j * nx + i]` sits at `origin + (i, j) * resolution`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub origin: Point2,
    pub resolution: f64,
    pub nx: usize,
    pub ny: usize,
    pub units: String,
    pub values: Vec<f64>,
}

impl Grid {
    /// Grid with nodes on both walls when the room size is a multiple of
    /// the resolution.
    pub fn covering(room: &Room, resolution: f64, units: &str) -> Result<Self> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(invalid("resolution", "must be positive"));
        }
        let n = |len: f64| (len / resolution + 1e-9).floor() as usize + 1;
        let (nx, ny) = (n(room.width), n(room.length));
        Ok(Self {
            origin: Point2::new(0.0, 0.0),
            resolution,
            nx,
            ny,
            units: units.to_string(),
            values: vec![0.0; nx * ny],
        })
    }

    pub fn point(&self, i: usize, j: usize) -> Point2 {
        Point2::new(self.origin.x + i as f64 * self.resolution, self.origin.y + j as f64 * self.resolution)
    }

    pub fn points(&self) -> Vec<Point2> {
        (0..self.ny).flat_map(|j| (0..self.nx).map(move |i| (i, j))).map(|(i, j)| self.point(i, j)).collect()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.nx + i]
    }

    /// Value at the node nearest to `p`.
    pub fn sample(&self, p: Point2) -> f64 {
        let i = ((p.x - self.origin.x) / self.resolution).round().clamp(0.0, (self.nx - 1) as f64) as usize;
        let j = ((p.y - self.origin.y) / self.resolution).round().clamp(0.0, (self.ny - 1) as f64) as usize;
        self.get(i, j)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "# origin_x={} origin_y={} resolution={} nx={} ny={} units={}",
            self.origin.x, self.origin.y, self.resolution, self.nx, self.ny, self.units
        )?;
        for row in self.values.chunks(self.nx) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Config("empty grid file".into()))??;
        let mut g = Grid {
            origin: Point2::default(),
            resolution: 0.0,
            nx: 0,
            ny: 0,
            units: String::new(),
            values: Vec::new(),
        };
        for kv in header.trim_start_matches('#').split_whitespace() {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("bad header token `{kv}`")))?;
            let num = || v.parse::<f64>().map_err(|e| Error::Config(format!("{k}: {e}")));
            match k {
                "origin_x" => g.origin.x = num()?,
                "origin_y" => g.origin.y = num()?,
                "resolution" => g.resolution = num()?,
                "nx" => g.nx = num()? as usize,
                "ny" => g.ny = num()? as usize,
                "units" => g.units = v.to_string(),
                _ => {}
            }
        }
        for line in lines {
            let line = line?;
            for tok in line.split(',').filter(|t| !t.trim().is_empty()) {
                g.values.push(tok.trim().parse().map_err(|e| Error::Config(format!("grid value `{tok}`: {e}")))?);
            }
        }
        if g.values.len() != g.nx * g.ny {
            return Err(Error::Config(format!("expected {} grid values, found {}", g.nx * g.ny, g.values.len())));
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covering_includes_both_walls() {
        let g = Grid::covering(&Room::default(), 0.5, "W").unwrap();
        assert_eq!((g.nx, g.ny), (6, 6));
        assert_eq!(g.point(5, 5), Point2::new(2.5, 2.5));
        assert!(Grid::covering(&Room::default(), 0.0, "W").is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut g = Grid::covering(&Room::default(), 0.25, "dB").unwrap();
        for (k, v) in g.values.iter_mut().enumerate() {
            *v = k as f64 * 0.1 - 3.0;
        }
        let mut buf = Vec::new();
        g.write(&mut buf).unwrap();
        assert_eq!(Grid::read(&buf[..]).unwrap(), g);
    }
}
