// quick throughput probe for the conv kernels via the public tensor API
use dtsl_core::tensor::Tape;
use std::time::Instant;

fn main() {
    // typical decoder layer: [1,48,32,32] x [16,48,3,3], the most expensive
    let (b, ci, h, w, co) = (1usize, 48usize, 32usize, 32usize, 16usize);
    let input: Vec<f64> = (0..b * ci * h * w).map(|i| (i as f64).sin()).collect();
    let kernel: Vec<f64> = (0..co * ci * 9).map(|i| (i as f64).cos()).collect();
    let flops = 2.0 * (b * co * h * w * ci * 9) as f64;

    let reps = 200;
    let t0 = Instant::now();
    let mut sink = 0.0;
    for _ in 0..reps {
        let tape = Tape::new();
        let x = tape.constant(&[b, ci, h, w], input.clone()).unwrap();
        let k = tape.constant(&[co, ci, 3, 3], kernel.clone()).unwrap();
        let y = x.conv2d(&k, 1, 1).unwrap();
        sink += y.with_data(|d| d[0]);
    }
    let dt = t0.elapsed().as_secs_f64();
    println!("conv fwd: {:.2} GFLOP/s (sink {sink:.3})", flops * reps as f64 / dt / 1e9);

    // backward throughput
    let reps = 100;
    let t0 = Instant::now();
    for _ in 0..reps {
        let tape = Tape::new();
        let x = tape.leaf(&[b, ci, h, w], input.clone(), true).unwrap();
        let k = tape.leaf(&[co, ci, 3, 3], kernel.clone(), true).unwrap();
        let y = x.conv2d(&k, 1, 1).unwrap();
        let loss = y.sum().unwrap();
        loss.backward().unwrap();
        sink += x.grad().unwrap()[0];
    }
    let dt = t0.elapsed().as_secs_f64();
    println!("conv fwd+bwd: {:.2} GFLOP-fwd-equiv/s (sink {sink:.3})", 3.0 * flops * reps as f64 / dt / 1e9);
}
