//! SVG scatter plots with the zero level set of θ traced by marching squares.

use std::fmt::Write as _;

use anyhow::{bail, Result};
use momfit_core::{Dataset, Polynomial};
use rayon::prelude::*;

/// Grid nodes per axis.
pub const GRID: usize = 512;
/// Padding of the data bounding box, as a fraction of its extent.
pub const PAD: f64 = 0.1;

const WIDTH: f64 = 640.0;
const COLORS: [&str; 2] = ["#1f77b4", "#d62728"];

pub struct PlotInput<'a> {
    pub s1: &'a Dataset,
    pub s2: &'a Dataset,
    pub theta: &'a Polynomial,
}

/// Axis-aligned plotting window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl Window {
    /// Bounding box of the points padded by [`PAD`] of its extent on each side.
    /// A flat axis gets a unit extent.
    pub fn around<'a>(sets: impl IntoIterator<Item = &'a Dataset>) -> Result<Self> {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for s in sets {
            if !s.is_empty() && s.dim() != 2 {
                bail!("plotting is 2-D only, got dimension {}", s.dim());
            }
            for x in s.iter() {
                for k in 0..2 {
                    lo[k] = lo[k].min(x[k]);
                    hi[k] = hi[k].max(x[k]);
                }
            }
        }
        if !lo[0].is_finite() {
            bail!("nothing to plot: no points");
        }
        for k in 0..2 {
            let mut span = hi[k] - lo[k];
            if span <= 0.0 {
                span = 1.0;
                lo[k] -= 0.5;
                hi[k] += 0.5;
            }
            lo[k] -= PAD * span;
            hi[k] += PAD * span;
        }
        Ok(Self { lo, hi })
    }

    /// Spacing of the grid nodes along each axis.
    pub fn cell(&self) -> [f64; 2] {
        [0, 1].map(|k| (self.hi[k] - self.lo[k]) / (GRID - 1) as f64)
    }
}

/// Segments of `{θ = 0}` over `w`, endpoints linearly interpolated on the cell
/// edges. Neighbouring cells compute shared endpoints identically, so closed
/// curves come out as closed chains.
pub fn contour(theta: &Polynomial, w: &Window) -> Result<Vec<[[f64; 2]; 2]>> {
    if theta.nvars() != 2 {
        bail!(
            "plotting is 2-D only, the model has {} variables",
            theta.nvars()
        );
    }
    let h = w.cell();
    let node = |i: usize, j: usize| [w.lo[0] + i as f64 * h[0], w.lo[1] + j as f64 * h[1]];
    let v: Vec<f64> = (0..GRID * GRID)
        .into_par_iter()
        .map(|k| theta.eval(&node(k % GRID, k / GRID)))
        .collect::<momfit_core::Result<_>>()?;
    let at = |i: usize, j: usize| v[j * GRID + i];
    // point on the edge from node a to node b (a before b in grid order)
    let cross = |a: (usize, usize), b: (usize, usize)| {
        let (va, vb) = (at(a.0, a.1), at(b.0, b.1));
        let t = va / (va - vb);
        let (pa, pb) = (node(a.0, a.1), node(b.0, b.1));
        [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])]
    };
    let segs = (0..GRID - 1)
        .into_par_iter()
        .flat_map_iter(|j| {
            let mut out = Vec::new();
            for i in 0..GRID - 1 {
                let c = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
                let inside = c.map(|(a, b)| at(a, b) >= 0.0);
                let case = inside
                    .iter()
                    .enumerate()
                    .fold(0, |m, (k, s)| m | (usize::from(*s) << k));
                if case == 0 || case == 15 {
                    continue;
                }
                let bottom = || cross(c[0], c[1]);
                let right = || cross(c[1], c[2]);
                let top = || cross(c[3], c[2]);
                let left = || cross(c[0], c[3]);
                match case {
                    1 | 14 => out.push([left(), bottom()]),
                    2 | 13 => out.push([bottom(), right()]),
                    3 | 12 => out.push([left(), right()]),
                    4 | 11 => out.push([right(), top()]),
                    6 | 9 => out.push([bottom(), top()]),
                    7 | 8 => out.push([left(), top()]),
                    5 | 10 => {
                        let mid = c.iter().map(|(a, b)| at(*a, *b)).sum::<f64>() / 4.0;
                        // corners 0 and 2 share a sign; the centre decides
                        // whether they connect through the cell
                        if (mid >= 0.0) == inside[0] {
                            out.push([left(), top()]);
                            out.push([bottom(), right()]);
                        } else {
                            out.push([left(), bottom()]);
                            out.push([right(), top()]);
                        }
                    }
                    _ => unreachable!(),
                }
            }
            out
        })
        .collect();
    Ok(segs)
}

/// SVG document with both classes as dots and the zero level set of θ.
pub fn render_svg(p: &PlotInput) -> Result<String> {
    let w = Window::around([p.s1, p.s2])?;
    let segs = contour(p.theta, &w)?;
    let span = [w.hi[0] - w.lo[0], w.hi[1] - w.lo[1]];
    let scale = WIDTH / span[0];
    let height = span[1] * scale;
    let px = |x: &[f64]| ((x[0] - w.lo[0]) * scale, (w.hi[1] - x[1]) * scale);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0}" height="{height:.0}" viewBox="0 0 {WIDTH:.2} {height:.2}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (set, color) in [p.s1, p.s2].into_iter().zip(COLORS) {
        if set.is_empty() {
            continue;
        }
        let _ = writeln!(s, r#"<g fill="{color}" fill-opacity="0.6">"#);
        for x in set.iter() {
            let (a, b) = px(x);
            let _ = writeln!(s, r#"<circle cx="{a:.2}" cy="{b:.2}" r="1.5"/>"#);
        }
        let _ = writeln!(s, "</g>");
    }
    let mut d = String::new();
    for [a, b] in &segs {
        let (a0, a1) = px(a);
        let (b0, b1) = px(b);
        let _ = write!(d, "M{a0:.2} {a1:.2}L{b0:.2} {b1:.2}");
    }
    let _ = writeln!(
        s,
        r#"<path class="level-set" d="{d}" fill="none" stroke="black" stroke-width="1.5"/>"#
    );
    s.push_str("</svg>\n");
    Ok(s)
}
