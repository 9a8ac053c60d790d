use std::io::Write;

use super::{ElevationMap, TraversabilityMask};
use crate::error::Result;

pub const MAP_CSV_HEADER: &str =
    "col,row,x,y,elevation,observed,traversable,signal_mean,signal_count";

/// Row-major map dump; absent values are written as empty fields.
pub fn write_map_csv<W: Write>(
    out: &mut W,
    map: &ElevationMap,
    mask: &TraversabilityMask,
) -> Result<()> {
    writeln!(out, "{MAP_CSV_HEADER}")?;
    for c in map.cells() {
        let p = map.cell_center(c);
        let elevation = map
            .elevation(c)
            .map(|z| format!("{z:.6}"))
            .unwrap_or_default();
        let mean = map
            .signal_mean(c)
            .map(|s| format!("{s:.6}"))
            .unwrap_or_default();
        writeln!(
            out,
            "{},{},{:.6},{:.6},{},{},{},{},{}",
            c.col,
            c.row,
            p.x,
            p.y,
            elevation,
            u8::from(map.is_observed(c)),
            u8::from(mask.is_traversable(c)),
            mean,
            map.signal_count(c)
        )?;
    }
    Ok(())
}

/// One value per cell, rendered with a linear scale.
#[derive(Clone, Debug)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    /// Row-major from row 0 (minimum y).
    pub values: Vec<Option<f64>>,
    pub min: f64,
    pub max: f64,
    pub label: String,
}

impl Heatmap {
    pub fn signal(map: &ElevationMap) -> Self {
        let values: Vec<_> = map.cells().map(|c| map.signal_mean(c)).collect();
        Self::from_values(map.width(), map.height(), values, "signal_mean")
    }

    pub fn elevation(map: &ElevationMap) -> Self {
        let values: Vec<_> = map.cells().map(|c| map.elevation(c)).collect();
        Self::from_values(map.width(), map.height(), values, "elevation_m")
    }

    pub fn from_values(width: usize, height: usize, values: Vec<Option<f64>>, label: &str) -> Self {
        let (min, max) = values
            .iter()
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(*v), hi.max(*v))
            });
        let (min, max) = if min.is_finite() {
            (min, max)
        } else {
            (0.0, 0.0)
        };
        Heatmap {
            width,
            height,
            values,
            min,
            max,
            label: label.to_string(),
        }
    }

    fn normalized(&self, v: f64) -> f64 {
        if self.max > self.min {
            ((v - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }

    /// Image rows top-down, i.e. highest map row first.
    fn image_order(&self) -> impl Iterator<Item = Option<f64>> + '_ {
        (0..self.height).rev().flat_map(move |row| {
            (0..self.width).map(move |col| self.values[row * self.width + col])
        })
    }

    /// Binary PPM (P6). Absent cells are black; values map blue -> green -> red.
    pub fn write_ppm<W: Write>(&self, out: &mut W) -> Result<()> {
        write!(out, "P6\n{} {}\n255\n", self.width, self.height)?;
        let mut buf = Vec::with_capacity(self.width * self.height * 3);
        for v in self.image_order() {
            match v {
                None => buf.extend_from_slice(&[0, 0, 0]),
                Some(v) => {
                    let t = self.normalized(v);
                    let r = (255.0 * t).round() as u8;
                    let g = (255.0 * (1.0 - (2.0 * t - 1.0).abs())).round() as u8;
                    let b = (255.0 * (1.0 - t)).round() as u8;
                    buf.extend_from_slice(&[r, g, b]);
                }
            }
        }
        out.write_all(&buf)?;
        Ok(())
    }

    /// Binary PGM (P5). Absent cells are 0; values map linearly to 1..=255.
    pub fn write_pgm<W: Write>(&self, out: &mut W) -> Result<()> {
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        let buf: Vec<u8> = self
            .image_order()
            .map(|v| match v {
                None => 0,
                Some(v) => 1 + (254.0 * self.normalized(v)).round() as u8,
            })
            .collect();
        out.write_all(&buf)?;
        Ok(())
    }

    /// Sidecar text declaring the color scale.
    pub fn scale_description(&self) -> String {
        format!(
            "layer: {}\nmin: {:.6}\nmax: {:.6}\nscale: linear\n\
             ppm: t=(v-min)/(max-min); rgb=(255t, 255(1-|2t-1|), 255(1-t)); absent=black\n\
             pgm: gray=1+254t; absent=0\norientation: top row = maximum y\n",
            self.label, self.min, self.max
        )
    }
}
