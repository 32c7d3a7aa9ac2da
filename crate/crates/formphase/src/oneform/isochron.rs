//! Level curves of the fitted phase on a planar window.
//!
//! Phase lives on the circle, so the marched field is `sin(φ - level)`
//! restricted to cells where `cos(φ - level)` is positive on average; this
//! picks out `φ = level` and discards the antipodal set `φ = level + π`.

use nalgebra::DVector;
use std::collections::HashMap;

use super::model::FormPhaseModel;
use crate::error::{Error, Result};
use crate::numeric::wrap_to_pi;

/// Largest circular spread of a cell's corner phases the tracer will contour.
const MAX_CELL_SPREAD: f64 = std::f64::consts::FRAC_PI_2;

/// Planar slice through state space: coordinates `axes` vary over the
/// rectangle `[lo.0, hi.0] × [lo.1, hi.1]`, all others are pinned to `base`.
#[derive(Debug, Clone)]
pub struct IsochronWindow {
    pub axes: (usize, usize),
    pub lo: (f64, f64),
    pub hi: (f64, f64),
    pub base: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct Polyline {
    pub points: Vec<DVector<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum EdgeKey {
    /// Between nodes (i, j) and (i+1, j).
    H(usize, usize),
    /// Between nodes (i, j) and (i, j+1).
    V(usize, usize),
}

/// Extract isochron polylines for each level. `grid` counts nodes per axis.
/// Nodes where the phase is undefined are skipped; cells touching them draw
/// nothing.
pub fn isochrons(
    model: &FormPhaseModel,
    levels: &[f64],
    window: &IsochronWindow,
    grid: (usize, usize),
) -> Result<Vec<(f64, Vec<Polyline>)>> {
    let dim = model.dim();
    let (au, av) = window.axes;
    if au >= dim || av >= dim || au == av {
        return Err(Error::InvalidConfig(format!(
            "window axes ({au}, {av}) invalid for dimension {dim}"
        )));
    }
    if window.base.len() != dim {
        return Err(Error::InvalidConfig(
            "window base point has the wrong dimension".into(),
        ));
    }
    if !(window.lo.0 < window.hi.0 && window.lo.1 < window.hi.1) {
        return Err(Error::InvalidConfig(
            "window bounds must satisfy lo < hi on both axes".into(),
        ));
    }
    let (nu, nv) = grid;
    if nu < 2 || nv < 2 {
        return Err(Error::InvalidConfig(
            "grid needs at least two nodes per axis".into(),
        ));
    }
    if levels.iter().any(|l| !l.is_finite()) {
        return Err(Error::InvalidConfig("levels must be finite".into()));
    }

    let du = (window.hi.0 - window.lo.0) / (nu - 1) as f64;
    let dv = (window.hi.1 - window.lo.1) / (nv - 1) as f64;
    let node_u = |i: usize| window.lo.0 + du * i as f64;
    let node_v = |j: usize| window.lo.1 + dv * j as f64;

    // Per node: phase, plus the phase change a step to the next node can
    // produce (in-plane gradient times cell diagonal). The latter feeds the
    // resolution mask below; corner phases alone cannot detect a field that
    // wraps a whole turn inside one cell.
    let diag = du.hypot(dv);
    let mut phases: Vec<Option<(f64, f64)>> = Vec::with_capacity(nu * nv);
    let mut any = false;
    for j in 0..nv {
        for i in 0..nu {
            let mut x = window.base.clone();
            x[au] = node_u(i);
            x[av] = node_v(j);
            match (model.phase(&x), model.one_form(&x)) {
                (Ok(p), Ok(c)) => {
                    phases.push(Some((p, c[au].hypot(c[av]) * diag)));
                    any = true;
                }
                _ => phases.push(None),
            }
        }
    }
    if !any {
        return Err(Error::EmptyWindow);
    }
    let at = |i: usize, j: usize| phases[j * nu + i].map(|(p, _)| p);
    let step = |i: usize, j: usize| phases[j * nu + i].map(|(_, s)| s);

    let mut out = Vec::with_capacity(levels.len());
    for &level in levels {
        let mut segments: Vec<(EdgeKey, EdgeKey)> = Vec::new();
        for j in 0..nv - 1 {
            for i in 0..nu - 1 {
                let corners = [at(i, j), at(i + 1, j), at(i + 1, j + 1), at(i, j + 1)];
                if corners.iter().any(|c| c.is_none()) {
                    continue;
                }
                // Crossings are placed by linear interpolation, which only
                // means anything where the grid resolves the field. Skip
                // cells whose corner phases disagree by more than a quarter
                // turn (circularly), and cells where the in-plane gradient
                // would sweep more than that across one cell: near the phase
                // singularity and outside the fitted annulus the field
                // oscillates below the grid scale (corner values can even
                // alias back into agreement), and every "crossing" found
                // there is noise. Within an accepted cell, corners
                // bracketing the level pin any edge point's phase to the
                // level within the same spread.
                let spread_ok = corners.iter().all(|a| {
                    corners
                        .iter()
                        .all(|b| wrap_to_pi(a.unwrap() - b.unwrap()).abs() <= MAX_CELL_SPREAD)
                });
                let steps = [
                    step(i, j),
                    step(i + 1, j),
                    step(i + 1, j + 1),
                    step(i, j + 1),
                ];
                if !spread_ok || steps.iter().any(|s| s.unwrap() > MAX_CELL_SPREAD) {
                    continue;
                }
                let f: Vec<f64> = corners
                    .iter()
                    .map(|c| (c.unwrap() - level).sin())
                    .collect();
                let c_sum: f64 = corners.iter().map(|c| (c.unwrap() - level).cos()).sum();
                if c_sum <= 0.0 {
                    continue;
                }
                let mask = (usize::from(f[0] > 0.0))
                    | (usize::from(f[1] > 0.0) << 1)
                    | (usize::from(f[2] > 0.0) << 2)
                    | (usize::from(f[3] > 0.0) << 3);
                let bottom = EdgeKey::H(i, j);
                let right = EdgeKey::V(i + 1, j);
                let top = EdgeKey::H(i, j + 1);
                let left = EdgeKey::V(i, j);
                match mask {
                    0b0000 | 0b1111 => {}
                    0b0001 => segments.push((bottom, left)),
                    0b1110 => segments.push((bottom, left)),
                    0b0010 => segments.push((bottom, right)),
                    0b1101 => segments.push((bottom, right)),
                    0b0100 => segments.push((right, top)),
                    0b1011 => segments.push((right, top)),
                    0b1000 => segments.push((top, left)),
                    0b0111 => segments.push((top, left)),
                    0b0011 => segments.push((left, right)),
                    0b1100 => segments.push((left, right)),
                    0b0110 => segments.push((bottom, top)),
                    0b1001 => segments.push((bottom, top)),
                    0b0101 => {
                        if f.iter().sum::<f64>() > 0.0 {
                            segments.push((bottom, right));
                            segments.push((top, left));
                        } else {
                            segments.push((bottom, left));
                            segments.push((right, top));
                        }
                    }
                    0b1010 => {
                        if f.iter().sum::<f64>() > 0.0 {
                            segments.push((bottom, left));
                            segments.push((right, top));
                        } else {
                            segments.push((bottom, right));
                            segments.push((top, left));
                        }
                    }
                    _ => unreachable!(),
                }
            }
        }
        segments.retain(|(a, b)| a != b);

        // Interpolated crossing point of a grid edge, in window coordinates.
        let f_at = |i: usize, j: usize| (at(i, j).unwrap() - level).sin();
        let point_of = |key: EdgeKey| -> (f64, f64) {
            match key {
                EdgeKey::H(i, j) => {
                    let fa = f_at(i, j);
                    let fb = f_at(i + 1, j);
                    let t = if fa == fb { 0.5 } else { fa / (fa - fb) };
                    (node_u(i) + du * t.clamp(0.0, 1.0), node_v(j))
                }
                EdgeKey::V(i, j) => {
                    let fa = f_at(i, j);
                    let fb = f_at(i, j + 1);
                    let t = if fa == fb { 0.5 } else { fa / (fa - fb) };
                    (node_u(i), node_v(j) + dv * t.clamp(0.0, 1.0))
                }
            }
        };

        // Chain segments into polylines: endpoints sharing a grid edge are
        // the same interpolated point.
        let mut adjacency: HashMap<EdgeKey, Vec<usize>> = HashMap::new();
        for (idx, (a, b)) in segments.iter().enumerate() {
            adjacency.entry(*a).or_default().push(idx);
            adjacency.entry(*b).or_default().push(idx);
        }
        let mut visited = vec![false; segments.len()];
        let mut polylines = Vec::new();
        // Open chains first (endpoints of degree 1), then closed loops.
        for start_open in [true, false] {
            for s in 0..segments.len() {
                if visited[s] {
                    continue;
                }
                let (a, b) = segments[s];
                let degree = |k: &EdgeKey| adjacency[k].iter().filter(|&&i| !visited[i]).count();
                if start_open && degree(&a) != 1 && degree(&b) != 1 {
                    continue;
                }
                let mut keys = if start_open && degree(&b) == 1 && degree(&a) != 1 {
                    vec![b, a]
                } else {
                    vec![a, b]
                };
                visited[s] = true;
                loop {
                    let tail = *keys.last().unwrap();
                    let next = adjacency[&tail].iter().find(|&&i| !visited[i]).copied();
                    match next {
                        Some(i) => {
                            visited[i] = true;
                            let (p, q) = segments[i];
                            keys.push(if p == tail { q } else { p });
                        }
                        None => break,
                    }
                }
                let points = keys
                    .iter()
                    .map(|&k| {
                        let (u, v) = point_of(k);
                        let mut x = window.base.clone();
                        x[au] = u;
                        x[av] = v;
                        x
                    })
                    .collect();
                polylines.push(Polyline { points });
            }
        }
        out.push((level, polylines));
    }
    Ok(out)
}
