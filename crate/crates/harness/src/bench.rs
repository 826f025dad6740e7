//! Compute scaling of one MambaTron cell against full self-attention, in
//! counted multiply-accumulates and wall time.

use std::path::Path;
use std::time::Instant;

use mambatron::blockattn::BlockConfig;
use mambatron::cell::{CellConfig, MambaTronCell};
use mambatron::numerics::{Graph, ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{HarnessError, Result};

pub const BENCH_HEADER: [&str; 5] = ["L", "cell_ns", "cell_macs", "attn_ns", "attn_macs"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchRow {
    pub l: usize,
    pub cell_ns: u128,
    pub cell_macs: u64,
    pub attn_ns: u128,
    pub attn_macs: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Slopes {
    pub cell_macs: f64,
    pub attn_macs: f64,
    pub cell_time: f64,
    pub attn_time: f64,
}

/// `lmin, 2·lmin, …` up to and including `lmax`.
pub fn doubling(lmin: usize, lmax: usize) -> Result<Vec<usize>> {
    if lmin == 0 || lmax < lmin {
        return Err(HarnessError::Usage(format!("bad length range {lmin}..{lmax}")));
    }
    let mut out = vec![lmin];
    while let Some(&l) = out.last() {
        if l * 2 > lmax {
            break;
        }
        out.push(l * 2);
    }
    Ok(out)
}

/// Single-head full attention `softmax(QKᵀ/√C)·V` over given L×C queries,
/// keys and values, one query row at a time so memory stays O(L·C). The MAC
/// count covers the score and mixing products, `2·L²·C`; per-token
/// projections are left out since they are linear in L for both models.
pub fn full_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> (Tensor, u64) {
    let (l, c) = (q.rows(), q.cols());
    let scale = 1.0 / (c as f64).sqrt();
    let mut out = vec![0.0; l * c];
    let mut s = vec![0.0; l];
    for i in 0..l {
        let qi = q.row(i);
        let mut m = f64::NEG_INFINITY;
        for (j, sj) in s.iter_mut().enumerate() {
            *sj = qi.iter().zip(k.row(j)).map(|(a, b)| a * b).sum::<f64>() * scale;
            m = m.max(*sj);
        }
        let mut z = 0.0;
        for sj in s.iter_mut() {
            *sj = (*sj - m).exp();
            z += *sj;
        }
        let oi = &mut out[i * c..(i + 1) * c];
        for (j, &sj) in s.iter().enumerate() {
            let p = sj / z;
            for (o, &vv) in oi.iter_mut().zip(v.row(j)) {
                *o += p * vv;
            }
        }
    }
    (Tensor::new(vec![l, c], out).expect("L×C"), 2 * (l * l * c) as u64)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Best-of-`reps` timings at each length; MAC counts are exact.
pub fn bench_complexity(lengths: &[usize], w_blk: usize, c: usize, reps: usize, seed: u64) -> Result<(Vec<BenchRow>, Slopes)> {
    if lengths.len() < 4 || lengths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(HarnessError::Usage("need at least 4 ascending lengths".into()));
    }
    let lmax = *lengths.last().unwrap();
    let cfg = CellConfig {
        block: BlockConfig { w_blk, heads: 4, c },
        state_dim: 16,
        max_len: lmax,
        zoh_b: false,
    };
    cfg.block.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let cell = MambaTronCell::init(&mut store, "bench", &cfg, &mut rng);
    let mut rows = Vec::with_capacity(lengths.len());
    for &l in lengths {
        let x = Tensor::uniform(&[l, c], 1.0, &mut rng);
        let [q, k, v] = [0, 1, 2].map(|_| Tensor::uniform(&[l, c], 1.0, &mut rng));
        let (mut cell_ns, mut attn_ns) = (u128::MAX, u128::MAX);
        let (mut cell_macs, mut attn_macs) = (0, 0);
        for _ in 0..reps.max(1) {
            let t0 = Instant::now();
            let mut g = Graph::inference();
            let xv = g.constant(x.clone());
            let y = cell.forward(&mut g, &store, xv, None, &cfg, true)?;
            std::hint::black_box(g.value(y));
            cell_ns = cell_ns.min(t0.elapsed().as_nanos());
            cell_macs = g.macs();
            let t1 = Instant::now();
            let (out, m) = full_attention(&q, &k, &v);
            std::hint::black_box(&out);
            attn_ns = attn_ns.min(t1.elapsed().as_nanos());
            attn_macs = m;
        }
        rows.push(BenchRow {
            l,
            cell_ns,
            cell_macs,
            attn_ns,
            attn_macs,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.l as f64).collect();
    let col = |f: &dyn Fn(&BenchRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    let slopes = Slopes {
        cell_macs: loglog_slope(&xs, &col(&|r| r.cell_macs as f64)),
        attn_macs: loglog_slope(&xs, &col(&|r| r.attn_macs as f64)),
        cell_time: loglog_slope(&xs, &col(&|r| r.cell_ns as f64)),
        attn_time: loglog_slope(&xs, &col(&|r| r.attn_ns as f64)),
    };
    Ok((rows, slopes))
}

pub fn write_bench_csv(path: &Path, rows: &[BenchRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(BENCH_HEADER)?;
    for r in rows {
        w.write_record([
            r.l.to_string(),
            r.cell_ns.to_string(),
            r.cell_macs.to_string(),
            r.attn_ns.to_string(),
            r.attn_macs.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
