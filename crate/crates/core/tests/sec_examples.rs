use cidm_core::linalg::sym_eigen_asc;
use cidm_core::sec::{
    active_frame_indices, dirichlet_energy_tensor, embedding_coefficients, metric_tensor, sobolev_basis,
    structure_constants, SecBasisConfig, SecFrame, StructureConstants,
};
use cidm_core::synth::{circle_tangent, generate, DensityProfile, SynthKind, SynthSpec};
use cidm_core::{CidmConfig, CidmModel};
use nalgebra::{DMatrix, DVector};

fn restrict(mat: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |a, b| mat[(idx[a], idx[b])])
}

#[test]
fn sobolev_count_is_stable_across_resamples() {
    let mut counts = Vec::new();
    for seed in 0..5 {
        let (pts, _) = generate(&SynthSpec::new(SynthKind::Circle, 200, 100 + seed)).unwrap();
        let model = CidmModel::fit(&pts, CidmConfig::new(8, 50)).unwrap();
        let frame = SecFrame::build(&model, SecBasisConfig::new(5, 50)).unwrap();
        counts.push(frame.u_tilde.ncols());
    }
    let mut sorted = counts.clone();
    sorted.sort();
    let median = sorted[2];
    assert!(counts.iter().all(|&c| c.abs_diff(median) <= 2), "{counts:?}");
}

#[test]
fn repeated_mode_loses_frame_directions() {
    let (pts, _) = generate(&SynthSpec::new(SynthKind::Circle, 120, 3)).unwrap();
    let model = CidmModel::fit(&pts, CidmConfig::new(8, 20)).unwrap();
    let c = structure_constants(&model, 20).unwrap();
    // relabel so that mode 3 is a copy of mode 1
    let map = |i: usize| if i == 3 { 1 } else { i };
    let mut data = Vec::with_capacity(20 * 20 * 20);
    for i in 0..20 {
        for j in 0..20 {
            for s in 0..20 {
                data.push(if s == 3 { 0.0 } else { c.get(map(i), map(j), s) });
            }
        }
    }
    let dup = StructureConstants::from_parts(20, 20, data).unwrap();
    let mut xi = model.eig_xi().to_vec();
    xi[3] = xi[1];
    let m = 4;
    let idx = active_frame_indices(m);
    let g = restrict(&metric_tensor(&dup, &xi, m).unwrap(), &idx);
    let e = restrict(&dirichlet_energy_tensor(&dup, &xi, m).unwrap(), &idx);
    let kept = sobolev_basis(&e, &g, 1e-3).unwrap().ncols();
    let g0 = restrict(&metric_tensor(&c, model.eig_xi(), m).unwrap(), &idx);
    let e0 = restrict(&dirichlet_energy_tensor(&c, model.eig_xi(), m).unwrap(), &idx);
    let kept0 = sobolev_basis(&e0, &g0, 1e-3).unwrap().ncols();
    assert!(kept < kept0 && kept < m * m, "{kept} vs {kept0}");
    let all = sobolev_basis(&e0, &g0, 0.0).unwrap().ncols();
    assert_eq!(all, idx.len());
}

#[test]
fn eigenfields_solve_the_pencil() {
    let (pts, _) = generate(&SynthSpec::new(SynthKind::Torus, 300, 5)).unwrap();
    let model = CidmModel::fit(&pts, CidmConfig::new(8, 72)).unwrap();
    let frame = SecFrame::build(&model, SecBasisConfig::new(6, 72)).unwrap();
    let vecs: Vec<DVector<f64>> = frame.fields.iter().map(|f| DVector::from_column_slice(&f.coeffs)).collect();
    let p = &frame.u_tilde * frame.u_tilde.transpose();
    for (a, f) in frame.fields.iter().enumerate().take(10) {
        let v = &vecs[a];
        assert!(f.eta >= -1e-10);
        assert!(((v.transpose() * &frame.g * v)[0] - 1.0).abs() < 1e-8);
        // residual within the Sobolev subspace
        let r = &p * (&frame.e * v - &frame.g * v * f.eta);
        assert!(r.norm() <= 1e-6 * (&frame.e * v).norm().max(1e-12));
        for b in (a + 1)..10 {
            assert!((v.transpose() * &frame.g * &vecs[b])[0].abs() < 1e-6);
        }
    }
}

#[test]
fn full_spectrum_tensors_are_psd() {
    let (pts, _) = generate(&SynthSpec::new(SynthKind::Circle, 110, 6)).unwrap();
    let model = CidmModel::fit(&pts, CidmConfig::new(8, 110)).unwrap();
    let c = structure_constants(&model, 110).unwrap();
    for m in [3, 6] {
        for t in [metric_tensor(&c, model.eig_xi(), m).unwrap(), dirichlet_energy_tensor(&c, model.eig_xi(), m).unwrap()] {
            assert_eq!(t, t.transpose());
            let (vals, _) = sym_eigen_asc(t.clone()).unwrap();
            assert!(vals[0] >= -1e-8 * t.norm(), "{} vs {}", vals[0], t.norm());
        }
    }
}

#[test]
fn four_dimensional_circle_arrows() {
    let mut spec = SynthSpec::new(SynthKind::Circle4d, 300, 7);
    spec.density_profile = DensityProfile::AngleSkewed;
    let (pts, params) = generate(&spec).unwrap();
    let model = CidmModel::fit(&pts, CidmConfig::new(8, 50)).unwrap();
    let frame = SecFrame::build(&model, SecBasisConfig::new(5, 50)).unwrap();
    let fhat = embedding_coefficients(&model, frame.config.m_op).unwrap();
    let map = &frame.arrow_maps(&fhat, 1).unwrap()[0];
    let mut good = 0;
    for i in 0..300 {
        let phis: Vec<f64> = model.eig_phi().row(i).iter().copied().collect();
        let a = map.arrow_from_phis(&phis);
        let t2 = circle_tangent(params[(i, 0)]);
        let t: Vec<f64> = [t2[0], t2[1], t2[0], t2[1]].iter().map(|v| v / 2f64.sqrt()).collect();
        let dot: f64 = a.iter().zip(&t).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (dot / na).abs() >= 0.9 {
            good += 1;
        }
    }
    assert!(good >= 270, "{good}/300");
}
