//! Forward/backward throughput of the actor-critic network.

use std::time::Instant;

use mixreg::nn::{Graph, Mode, PolicyValueNet, Tensor, TrunkConfig};
use mixreg::rng::rng_from_seed;

fn main() {
    let size: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(32);
    let mut rng = rng_from_seed(0);
    let (net, store) = PolicyValueNet::build([3, size, size], 5, &TrunkConfig::default(), &mut rng).unwrap();
    let obs_len = 3 * size * size;
    for &batch in &[16usize, 512] {
        let x = Tensor::new(vec![batch, 3, size, size], vec![0.5; batch * obs_len]).unwrap();
        let reps = if batch == 16 { 50 } else { 4 };
        let t = Instant::now();
        for _ in 0..reps {
            let mut g = Graph::with_params(&store);
            let xv = g.input(x.clone());
            let out = net.forward(&mut g, xv, Mode::Eval).unwrap();
            std::hint::black_box(g.value(out.logits));
        }
        let fwd = t.elapsed().as_secs_f64() / (reps * batch) as f64;
        let t = Instant::now();
        for _ in 0..reps {
            let mut g = Graph::with_params(&store);
            let xv = g.input(x.clone());
            let out = net.forward(&mut g, xv, Mode::Train).unwrap();
            let s = g.sum(out.logits);
            let v = g.sum(out.value);
            let l = g.add(s, v);
            std::hint::black_box(g.backward(l).unwrap());
        }
        let fb = t.elapsed().as_secs_f64() / (reps * batch) as f64;
        println!("obs {size} batch {batch}: fwd {:.1} us/sample, fwd+bwd {:.1} us/sample", fwd * 1e6, fb * 1e6);
    }
}
