use dlmp_core::netmodel::{build_sensitivities, parse_case, scale_loads, Edge, Load, Network};
use dlmp_core::powerflow::{dso_cost, potential_cost, potential_matrix, quadratic_form, solve};
use dlmp_core::rng::{stream, Purpose};
use nalgebra::DMatrix;
use rand::Rng;

fn random_network<R: Rng>(rng: &mut R) -> Network {
    let n = rng.random_range(1..=10);
    let edges = (1..=n)
        .map(|k| Edge {
            from: rng.random_range(0..k),
            to: k,
            r: rng.random_range(0.0..0.5),
            x: rng.random_range(0.0..0.5),
        })
        .collect();
    Network::new(n, edges, 1.0, vec![Load::default(); n]).unwrap()
}

#[test]
fn potential_matrix_is_positive_semidefinite() {
    let mut rng = stream(100, Purpose::Verify, &[]);
    for _ in 0..100 {
        let net = random_network(&mut rng);
        let sens = build_sensitivities(&net);
        let lambda = rng.random_range(0.0..3.0);
        let w = rng.random_range(0.0..=1.0);
        let l = potential_matrix(&sens, lambda, w);
        let m = DMatrix::from_row_slice(l.rows(), l.cols(), l.as_slice());
        assert!(l.is_symmetric());
        let eig = m.symmetric_eigen().eigenvalues;
        assert!(eig.iter().all(|&e| e >= -1e-12), "{eig}");
    }
}

#[test]
fn potential_cost_dominates_dso_cost() {
    let net = scale_loads(&parse_case(dlmp_core::CASE18).unwrap(), 3.0).unwrap();
    let sens = build_sensitivities(&net);
    let mut rng = stream(101, Purpose::Verify, &[]);
    for _ in 0..1000 {
        let p: Vec<f64> = (0..17).map(|_| rng.random_range(-0.5..0.5)).collect();
        let q: Vec<f64> = (0..17).map(|_| rng.random_range(-0.5..0.5)).collect();
        let lambda = rng.random_range(0.0..2.0);
        let w = rng.random_range(0.0..=1.0);
        let c = dso_cost(&solve(&sens, &p, &q, 1.0).unwrap(), &p, lambda, w, 1.0).unwrap();
        let ct = potential_cost(&sens, &p, &q, lambda, w, 1.0).unwrap();
        assert!(-ct <= -c + 1e-12);
        // C = (1-w) λ Σp + zᵀ L z
        let z: Vec<f64> = p.iter().chain(&q).copied().collect();
        let quad = quadratic_form(&potential_matrix(&sens, lambda, w), &z);
        let lin = (1.0 - w) * lambda * p.iter().sum::<f64>();
        assert!((c - lin - quad).abs() <= 1e-10 * c.abs().max(1.0));
    }
}
