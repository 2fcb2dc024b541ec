//! Finite-difference validation of every differentiable tape primitive.
//!
//! Each primitive is wrapped in a tiny scalar-valued graph and its
//! backward pass is compared against central differences at seeded
//! random points, resampling anything within 1e-3 of a non-smooth locus
//! (ReLU and abs kinks, percentile sample boundaries, sparsemax support
//! changes). The rounded sigmoid and the threshold masks are excluded:
//! their backward rules are deliberate surrogates, not derivatives.

use std::rc::Rc;

use portopt_core::matrix::Matrix;
use portopt_core::projection;
use portopt_core::tape::{finite_difference, Graph, NodeId, TapeError};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const POINTS: usize = 100;
const STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;
const KINK_MARGIN: f64 = 1e-3;

fn assert_grad_close(ad: &[f64], fd: &[f64], what: &str) {
    for (i, (a, f)) in ad.iter().zip(fd).enumerate() {
        let scale = a.abs().max(f.abs()).max(1e-6);
        assert!(
            (a - f).abs() <= REL_TOL * scale,
            "{what}: coordinate {i}: ad={a} fd={f}"
        );
    }
}

/// Checks one scalar-valued graph builder against finite differences at
/// random points, resampling points rejected by `accept`.
fn check_primitive(
    name: &str,
    dim: usize,
    sample: impl Fn(&mut ChaCha8Rng) -> Vec<f64>,
    accept: impl Fn(&[f64]) -> bool,
    build: impl Fn(&mut Graph, NodeId) -> NodeId,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed + dim as u64);
    let mut checked = 0;
    let mut attempts = 0;
    while checked < POINTS {
        attempts += 1;
        assert!(attempts < POINTS * 200, "{name}: rejection sampling stalled");
        let x = sample(&mut rng);
        if !accept(&x) {
            continue;
        }
        let mut g = Graph::new();
        let input = g.input(dim);
        let root = build(&mut g, input);
        g.bind(input, &x);
        if g.forward(root).is_err() {
            continue;
        }
        g.backward(root).unwrap();
        let ad = g.adjoint(input).to_vec();

        let fd = finite_difference::<_, TapeError>(
            |p| {
                let mut g = Graph::new();
                let input = g.input(dim);
                let root = build(&mut g, input);
                g.bind(input, p);
                let v = g.forward(root)?[0];
                Ok(v)
            },
            &x,
            STEP,
        )
        .unwrap();
        assert_grad_close(&ad, &fd, name);
        checked += 1;
    }
}

fn uniform(rng: &mut ChaCha8Rng, dim: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..dim).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect()
}

#[test]
fn elementwise_primitives_match_finite_differences() {
    let n = 6;
    check_primitive(
        "exp",
        n,
        |rng| uniform(rng, n, -2.0, 2.0),
        |_| true,
        |g, x| {
            let e = g.exp(x);
            g.sum(e)
        },
    );
    check_primitive(
        "log",
        n,
        |rng| uniform(rng, n, 0.1, 3.0),
        |_| true,
        |g, x| {
            let l = g.log(x);
            g.sum(l)
        },
    );
    check_primitive(
        "sigmoid",
        n,
        |rng| uniform(rng, n, -4.0, 4.0),
        |_| true,
        |g, x| {
            let s = g.sigmoid(x);
            g.sum(s)
        },
    );
    check_primitive(
        "neg",
        n,
        |rng| uniform(rng, n, -1.0, 1.0),
        |_| true,
        |g, x| {
            let v = g.neg(x);
            g.sum(v)
        },
    );
    check_primitive(
        "abs",
        n,
        |rng| uniform(rng, n, -1.0, 1.0),
        |x| x.iter().all(|v| v.abs() > KINK_MARGIN),
        |g, x| {
            let v = g.abs(x);
            g.sum(v)
        },
    );
    check_primitive(
        "relu",
        n,
        |rng| uniform(rng, n, -1.0, 1.0),
        |x| x.iter().all(|v| v.abs() > KINK_MARGIN),
        |g, x| {
            let v = g.relu(x);
            g.sum(v)
        },
    );
}

#[test]
fn arithmetic_primitives_match_finite_differences() {
    let n = 5;
    // Treat the input as [a | b] and exercise each binary op, plus a
    // vector-scalar broadcast variant through a constant.
    let split = move |g: &mut Graph, x: NodeId, op: fn(&mut Graph, NodeId, NodeId) -> NodeId| {
        // Split via two matvec selections.
        let mut left = Matrix::zeros(n, 2 * n);
        let mut right = Matrix::zeros(n, 2 * n);
        for i in 0..n {
            left.set(i, i, 1.0);
            right.set(i, n + i, 1.0);
        }
        let a = g.matvec(Rc::new(left), x);
        let b = g.matvec(Rc::new(right), x);
        let combined = op(g, a, b);
        g.sum(combined)
    };
    check_primitive(
        "add",
        2 * n,
        |rng| uniform(rng, 2 * n, -1.0, 1.0),
        |_| true,
        move |g, x| split(g, x, |g, a, b| g.add(a, b)),
    );
    check_primitive(
        "sub",
        2 * n,
        |rng| uniform(rng, 2 * n, -1.0, 1.0),
        |_| true,
        move |g, x| split(g, x, |g, a, b| g.sub(a, b)),
    );
    check_primitive(
        "mul",
        2 * n,
        |rng| uniform(rng, 2 * n, -1.0, 1.0),
        |_| true,
        move |g, x| split(g, x, |g, a, b| g.mul(a, b)),
    );
    check_primitive(
        "div",
        2 * n,
        |rng| uniform(rng, 2 * n, 0.2, 1.5),
        |_| true,
        move |g, x| split(g, x, |g, a, b| g.div(a, b)),
    );
    check_primitive(
        "scalar broadcast",
        n,
        |rng| uniform(rng, n, -1.0, 1.0),
        |_| true,
        |g, x| {
            let c = g.scalar(0.37);
            let scaled = g.mul(x, c);
            let shifted = g.add(scaled, c);
            let m = g.mean(shifted);
            let d = g.div(x, c);
            let s = g.sum(d);
            g.add(m, s)
        },
    );
}

#[test]
fn reductions_match_finite_differences() {
    let n = 7;
    check_primitive(
        "sum",
        n,
        |rng| uniform(rng, n, -1.0, 1.0),
        |_| true,
        |g, x| g.sum(x),
    );
    check_primitive(
        "mean",
        n,
        |rng| uniform(rng, n, -1.0, 1.0),
        |_| true,
        |g, x| g.mean(x),
    );
    check_primitive(
        "std",
        n,
        |rng| uniform(rng, n, -0.05, 0.05),
        |x| {
            // Stay away from the zero-deviation point.
            let mean: f64 = x.iter().sum::<f64>() / x.len() as f64;
            x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() > 1e-6
        },
        |g, x| g.std(x),
    );
    check_primitive(
        "max",
        n,
        |rng| uniform(rng, n, -1.0, 1.0),
        |x| {
            let mut sorted = x.to_vec();
            sorted.sort_by(f64::total_cmp);
            sorted[n - 1] - sorted[n - 2] > KINK_MARGIN
        },
        |g, x| g.max(x),
    );
    check_primitive(
        "matvec",
        4,
        |rng| uniform(rng, 4, -1.0, 1.0),
        |_| true,
        |g, x| {
            let m = Matrix::from_rows(
                3,
                4,
                vec![0.3, -1.2, 0.7, 0.1, 0.9, 0.4, -0.5, 1.1, -0.2, 0.6, 0.8, -0.9],
            );
            let y = g.matvec(Rc::new(m), x);
            let sq = g.mul(y, y);
            g.sum(sq)
        },
    );
}

#[test]
fn percentile_matches_finite_differences_off_the_boundaries() {
    let n = 9;
    for q in [10.0, 37.5, 50.0, 80.0] {
        check_primitive(
            "percentile",
            n,
            |rng| uniform(rng, n, -1.0, 1.0),
            |x| {
                let mut sorted = x.to_vec();
                sorted.sort_by(f64::total_cmp);
                sorted.windows(2).all(|w| w[1] - w[0] > KINK_MARGIN)
            },
            move |g, x| g.percentile(x, q),
        );
    }
}

#[test]
fn sparsemax_matches_finite_differences_off_support_changes() {
    let n = 6;
    let weights = [0.9, -0.4, 0.2, 1.5, -1.1, 0.3];
    check_primitive(
        "sparsemax",
        n,
        |rng| uniform(rng, n, -0.6, 0.6),
        |z| {
            // Keep every coordinate clear of the support boundary.
            let w = projection::sparsemax(z);
            let support: Vec<usize> = (0..n).filter(|i| w[*i] > 0.0).collect();
            let sum: f64 = support.iter().map(|i| z[*i]).sum();
            let tau = (sum - 1.0) / support.len() as f64;
            z.iter().all(|zi| (zi - tau).abs() > KINK_MARGIN)
        },
        move |g, z| {
            let w = g.sparsemax(z);
            let c = g.constant(&weights);
            let dot = g.mul(w, c);
            g.sum(dot)
        },
    );
}

#[test]
fn softmax_composition_matches_finite_differences() {
    let n = 6;
    let weights = [1.3, -0.7, 0.5, -0.2, 0.8, -1.0];
    check_primitive(
        "softmax",
        n,
        |rng| uniform(rng, n, -1.5, 1.5),
        |_| true,
        move |g, z| {
            let w = projection::softmax_node(g, z);
            let c = g.constant(&weights);
            let dot = g.mul(w, c);
            g.sum(dot)
        },
    );
}

#[test]
fn sparsemax_jvp_matches_finite_differences_directionally() {
    // The public JVP against a forward-difference of the full projection.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 5;
    let mut done = 0;
    while done < 50 {
        let z = uniform(&mut rng, n, -0.5, 0.5);
        let w = projection::sparsemax(&z);
        let support: Vec<usize> = (0..n).filter(|i| w[*i] > 0.0).collect();
        let sum: f64 = support.iter().map(|i| z[*i]).sum();
        let tau = (sum - 1.0) / support.len() as f64;
        if z.iter().any(|zi| (zi - tau).abs() <= KINK_MARGIN) {
            continue;
        }
        let upstream = uniform(&mut rng, n, -1.0, 1.0);
        let jvp = projection::sparsemax_jacobian_vector_product(&z, &upstream);
        // <J^T u, e_i> via central differences of <u, sparsemax(z)>.
        for i in 0..n {
            let mut zp = z.clone();
            zp[i] += STEP;
            let up: f64 =
                projection::sparsemax(&zp).iter().zip(&upstream).map(|(a, b)| a * b).sum();
            zp[i] = z[i] - STEP;
            let down: f64 =
                projection::sparsemax(&zp).iter().zip(&upstream).map(|(a, b)| a * b).sum();
            let fd = (up - down) / (2.0 * STEP);
            let scale = jvp[i].abs().max(fd.abs()).max(1e-6);
            assert!((jvp[i] - fd).abs() <= REL_TOL * scale, "jvp coord {i}: {} vs {fd}", jvp[i]);
        }
        done += 1;
    }
}
