use augnet::tensor::{Tape, Tensor};
use std::time::Instant;

fn main() {
    // raw matmul 64x288 @ 288x1024, repeated
    let (m, k, n) = (64usize, 288usize, 1024usize);
    let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.01).sin()).collect();
    let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.02).cos()).collect();
    let mut out = vec![0.0; m * n];
    let reps = 200;
    let t0 = Instant::now();
    for _ in 0..reps {
        out.fill(0.0);
        augnet::tensor::bench_matmul(&a, &b, m, k, n, &mut out);
    }
    let dt = t0.elapsed().as_secs_f64();
    let flops = 2.0 * (m * k * n * reps) as f64;
    println!("raw matmul: {:.2} GFLOP/s (checksum {:.3})", flops / dt / 1e9, out[777]);

    let bsz = 16;
    let x = Tensor::from_fn(&[bsz, 32, 32, 32], |i| (i as f64 * 0.001).sin());
    let w = Tensor::from_fn(&[64, 32, 3, 3], |i| (i as f64 * 0.01).cos() * 0.1);
    let t0 = Instant::now();
    let mut tape = Tape::new();
    let y = tape.conv2d(&x, &w, 1, 1);
    let fwd = t0.elapsed().as_secs_f64();
    let flops = 2.0 * (bsz * 64 * 1024 * 288) as f64;
    println!("conv2d fwd: {:.3}s  {:.2} GFLOP/s", fwd, flops / fwd / 1e9);
    let t0 = Instant::now();
    let mut tape = Tape::new();
    let xl = tape.leaf(x.clone());
    let wl = tape.leaf(w.clone());
    let y2 = tape.conv2d(&xl, &wl, 1, 1);
    let s = tape.sum(&y2);
    let g = tape.backward(&s);
    let tot = t0.elapsed().as_secs_f64();
    println!("conv2d fwd+bwd: {:.3}s  {:.2} GFLOP/s (grad mean {:.3e})", tot, 3.0 * flops / tot / 1e9,
        g.get(&wl).unwrap().iter().sum::<f64>() / (64.0 * 288.0));
    let _ = y;
}
