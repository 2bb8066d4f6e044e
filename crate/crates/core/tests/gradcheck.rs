use rand::Rng;
use stopbed::nn::{finite_difference_check, DenseNet};
use stopbed::rng::stream;

fn random_net(rng: &mut impl Rng, seed: u64) -> DenseNet {
    let depth = rng.random_range(1..=4);
    let mut sizes = vec![rng.random_range(1..=6)];
    for _ in 0..depth {
        sizes.push(rng.random_range(1..=9));
    }
    sizes.push(if rng.random_bool(0.5) { 1 } else { rng.random_range(1..=3) });
    DenseNet::new(&sizes, seed).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

#[test]
fn backprop_matches_central_differences_on_random_nets() {
    let mut rng = stream(2024, &[]);
    let h = 1e-6;
    for trial in 0..100u64 {
        let net = random_net(&mut rng, trial);
        let x: Vec<f64> = (0..net.input_size()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let u: Vec<f64> = (0..net.output_size()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |n: &DenseNet, x: &[f64]| -> f64 {
            n.forward(x).unwrap().iter().zip(&u).map(|(a, b)| a * b).sum()
        };

        let g = net.grad_params(&x, &u).unwrap();
        let base = net.params().to_vec();
        let mut probe = net.clone();
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += h;
            probe.set_params(&p).unwrap();
            let up = f(&probe, &x);
            p[i] -= 2.0 * h;
            probe.set_params(&p).unwrap();
            let down = f(&probe, &x);
            let fd = (up - down) / (2.0 * h);
            assert!(rel(g.0[i], fd) <= 1e-5, "net {trial} param {i}: {} vs {fd}", g.0[i]);
        }

        if net.output_size() == 1 {
            let gx = net.grad_input(&x).unwrap();
            for i in 0..x.len() {
                let mut xp = x.clone();
                xp[i] += h;
                let up = net.forward(&xp).unwrap()[0];
                xp[i] -= 2.0 * h;
                let down = net.forward(&xp).unwrap()[0];
                let fd = (up - down) / (2.0 * h);
                assert!(rel(gx[i], fd) <= 1e-5, "net {trial} input {i}: {} vs {fd}", gx[i]);
            }
        } else {
            assert!(net.grad_input(&x).is_err());
        }

        let report = finite_difference_check(&net, &x, &u, h).unwrap();
        assert!(report.worst() <= 1e-5, "net {trial}: {report:?}");
    }
}

#[test]
fn value_and_gradient_agree_with_separate_calls() {
    let net = DenseNet::new(&[3, 7, 7, 1], 9).unwrap();
    let x = [0.3, -1.2, 0.8];
    let (v, g) = net.value_and_grad_input(&x).unwrap();
    assert_eq!(v, net.forward(&x).unwrap()[0]);
    assert_eq!(g, net.grad_input(&x).unwrap());
}
