//! Independent oracles shared by the integration suites: a dense linear
//! solver for the Yule-Walker system, windowed brute-force morphology, and a
//! flood-fill component counter.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use arstack::BinaryMask;

/// Solves `R * a = -[r[1..=p]]` (R Toeplitz from `r[0..p]`) by Gaussian
/// elimination with partial pivoting.
pub fn dense_yule_walker(r: &[f64], p: usize) -> Vec<f64> {
    let mut m = vec![vec![0.0f64; p + 1]; p];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().take(p).enumerate() {
            *cell = r[i.abs_diff(j)];
        }
        row[p] = -r[i + 1];
    }
    for col in 0..p {
        let pivot = (col..p)
            .max_by(|a, b| m[*a][col].abs().total_cmp(&m[*b][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        let d = m[col][col];
        assert!(d.abs() > 1e-12, "singular Yule-Walker system in oracle");
        for row in col + 1..p {
            let f = m[row][col] / d;
            for k in col..=p {
                m[row][k] -= f * m[col][k];
            }
        }
    }
    let mut a = vec![0.0f64; p];
    for row in (0..p).rev() {
        let mut acc = m[row][p];
        for k in row + 1..p {
            acc -= m[row][k] * a[k];
        }
        a[row] = acc / m[row][row];
    }
    a
}

fn brute_pass(mask: &BinaryMask, radius: usize, require_all: bool) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let r = radius as i64;
    let mut out = BinaryMask::empty(w, h);
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut acc = require_all;
            for dy in -r..=r {
                for dx in -r..=r {
                    let (nx, ny) = (x + dx, y + dy);
                    let inside = nx >= 0 && ny >= 0 && nx < w as i64 && ny < h as i64;
                    let bit = inside && mask.get(nx as usize, ny as usize);
                    if require_all {
                        acc &= bit;
                    } else {
                        acc |= bit;
                    }
                }
            }
            out.set(x as usize, y as usize, acc);
        }
    }
    out
}

/// Erosion-then-dilation by direct window scans.
pub fn brute_force_opening(mask: &BinaryMask, radius: usize) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    brute_pass(&brute_pass(mask, radius, true), radius, false)
}

/// Number of 8-connected components.
pub fn flood_fill_components(mask: &BinaryMask) -> usize {
    let (w, h) = (mask.width(), mask.height());
    let mut seen = vec![false; w * h];
    let mut count = 0usize;
    for start in 0..w * h {
        if !mask.bits()[start] || seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        let mut frontier = vec![start];
        while let Some(idx) = frontier.pop() {
            let (x, y) = ((idx % w) as i64, (idx / w) as i64);
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let nidx = (ny * w as i64 + nx) as usize;
                    if mask.bits()[nidx] && !seen[nidx] {
                        seen[nidx] = true;
                        frontier.push(nidx);
                    }
                }
            }
        }
    }
    count
}

/// Relative path -> content for every file under `dir`.
pub fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    collect_tree(dir, dir, &mut out);
    out
}

fn collect_tree(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            collect_tree(root, &path, out);
        } else {
            let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            out.insert(rel, fs::read(&path).unwrap());
        }
    }
}
