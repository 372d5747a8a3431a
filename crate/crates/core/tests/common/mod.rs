//! Independent numerical oracles shared by integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

use memsim_core::circuit::Circuit;
use memsim_core::netlist::{flatten, parse_netlist};

pub fn circuit(text: &str) -> Circuit {
    flatten(&parse_netlist(text).expect("parse"), &HashMap::new()).expect("flatten")
}

pub fn fixture(name: &str) -> String {
    let path = format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

/// Dense Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        assert!(a[col][col] != 0.0, "singular oracle system");
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            let pivot = a[col].clone();
            for (dst, src) in a[row][col..].iter_mut().zip(&pivot[col..]) {
                *dst -= f * src;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Dormand-Prince 5(4) with error control, for scalar ODEs. Returns y at
/// each requested time (ascending, starting after `t0`).
pub fn dopri5(f: impl Fn(f64, f64) -> f64, t0: f64, y0: f64, times: &[f64], rtol: f64, atol: f64) -> Vec<f64> {
    const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];
    let mut out = Vec::with_capacity(times.len());
    let (mut t, mut y) = (t0, y0);
    let mut h = (times.last().copied().unwrap_or(t0) - t0) / 1000.0;
    for &target in times {
        while t < target {
            let step = h.min(target - t);
            let mut k = [0.0; 7];
            for s in 0..7 {
                let ys = y + step * (0..s).map(|j| A[s][j] * k[j]).sum::<f64>();
                k[s] = f(t + C[s] * step, ys);
            }
            let y5 = y + step * (0..7).map(|s| B5[s] * k[s]).sum::<f64>();
            let y4 = y + step * (0..7).map(|s| B4[s] * k[s]).sum::<f64>();
            let err = (y5 - y4).abs() / (atol + rtol * y5.abs().max(y.abs()));
            if err <= 1.0 {
                t += step;
                y = y5;
            }
            h = step * (0.9 * err.max(1e-10).powf(-0.2)).clamp(0.2, 5.0);
        }
        out.push(y);
    }
    out
}
