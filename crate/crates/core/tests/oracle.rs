use kernelforge::linalg::{self, c, CMatrix};
use kernelforge::models::{
    build_model, make_preparation, BathFamily, BathParams, HamiltonianModel, ModelKind, ModelParams,
    PrepSpec, PreparativeMap,
};
use kernelforge::operators::cumulative_trace_distance;
use kernelforge::oracle::{
    correlated_and_product, discretize_bath, exact_thermal_evolve, DiscretizedBath, EvolutionMode, ExactSystem, OracleOptions,
};
use kernelforge::{Error, C64};

fn ohmic(lambda: f64, omega_c: f64, beta: f64) -> BathParams {
    BathParams { family: BathFamily::OhmicExp, lambda, omega_c, beta, expansion: Default::default() }
}

fn model(kind: ModelKind, bath: BathParams) -> HamiltonianModel {
    let p = ModelParams { eps: Some(1.0), delta: Some(1.0), bath: Some(bath), ..Default::default() };
    build_model(kind, &p).unwrap()
}

fn monomer(eps: f64, bath: BathParams) -> HamiltonianModel {
    let p = ModelParams { site_energies: Some(vec![eps]), bath: Some(bath), ..Default::default() };
    build_model(ModelKind::Chromophoric, &p).unwrap()
}

fn small_bath(m: &HamiltonianModel, n: usize, cutoff: usize) -> DiscretizedBath {
    let spec = &m.couplings[0].bath;
    discretize_bath(spec, n, 6.0 * spec.omega_c).unwrap().with_fock_cutoff(cutoff).unwrap()
}

#[test]
fn global_thermal_state_is_stationary() {
    let m = model(ModelKind::SpinBoson, ohmic(0.1, 2.0, 1.0));
    let bath = small_bath(&m, 3, 5);
    let traj = exact_thermal_evolve(&m, &bath, &PreparativeMap::identity(2), 0.5, 21, EvolutionMode::TwoSided, &OracleOptions::default())
        .unwrap();
    let first = &traj.values()[0];
    for rho in traj.values() {
        assert!(linalg::max_abs((rho - first).view()) < 1e-10);
    }
}

#[test]
fn two_sided_evolution_is_a_density_matrix() {
    let m = model(ModelKind::SpinBoson, ohmic(0.2, 2.0, 1.0));
    let bath = small_bath(&m, 3, 5);
    let prep = make_preparation(&PrepSpec::Rotation { theta: std::f64::consts::PI / 8.0 }, Some(&m)).unwrap();
    let traj = exact_thermal_evolve(&m, &bath, &prep, 0.25, 41, EvolutionMode::TwoSided, &OracleOptions::default())
        .unwrap();
    for rho in traj.values() {
        assert!((linalg::trace(rho.view()) - 1.0).norm() < 1e-10);
        let ev = linalg::eigvalsh(&linalg::hermitian_part(rho)).unwrap();
        assert!(ev.iter().all(|&e| e > -1e-10));
    }
}

#[test]
fn cold_limit_is_the_ground_state() {
    let m = model(ModelKind::SpinBoson, ohmic(0.1, 2.0, 60.0));
    let bath = small_bath(&m, 2, 4);
    let sys = ExactSystem::new(&m, &bath, 20_000).unwrap();
    let w = sys.thermal_state();
    assert!(linalg::max_abs((w.dot(&w) - &w).view()) < 1e-10);
}

#[test]
fn fock_cutoff_convergence() {
    let m = model(ModelKind::PureDephasing, ohmic(0.05, 2.0, 2.0));
    let prep = make_preparation(&PrepSpec::Rotation { theta: std::f64::consts::PI / 8.0 }, Some(&m)).unwrap();
    let run = |cutoff| {
        let bath = small_bath(&m, 3, cutoff);
        exact_thermal_evolve(&m, &bath, &prep, 0.2, 51, EvolutionMode::TwoSided, &OracleOptions::default()).unwrap()
    };
    let (a, b) = (run(5), run(6));
    let sup = a.values().iter().zip(b.values()).map(|(x, y)| linalg::max_abs((x - y).view())).fold(0.0, f64::max);
    assert!(sup < 1e-4, "sup {sup}");
}

#[test]
fn limits_are_enforced() {
    let m = model(ModelKind::SpinBoson, ohmic(0.1, 2.0, 1.0));
    let bath = small_bath(&m, 6, 6);
    let opts = OracleOptions { dimension_cap: 1000 };
    let err = exact_thermal_evolve(&m, &bath, &PreparativeMap::identity(2), 0.1, 3, EvolutionMode::TwoSided, &opts);
    assert!(matches!(err, Err(Error::DimensionCap { .. })));
    // Strong coupling, hot bath, two Fock levels.
    let hot = model(ModelKind::SpinBoson, ohmic(1.0, 2.0, 0.2));
    let bath = small_bath(&hot, 2, 2);
    assert!(matches!(ExactSystem::new(&hot, &bath, 20_000), Err(Error::FockCutoff { .. })));
}

/// Lineshape of the discrete modes, `sum_j g_j^2/w_j^2 [coth (1 - cos wt) + i (sin wt - wt)]`.
fn discrete_lineshape(bath: &DiscretizedBath, beta: f64, t: f64) -> C64 {
    bath.modes
        .iter()
        .map(|&(w, g)| {
            let coth = 1.0 / (0.5 * beta * w).tanh();
            g * g / (w * w) * c(coth * (1.0 - (w * t).cos()), (w * t).sin() - w * t)
        })
        .sum()
}

#[test]
fn monomer_correlations_follow_the_discrete_lineshape() {
    let beta = 1.0;
    let m = monomer(1.5, ohmic(0.05, 2.0, beta));
    let bath = small_bath(&m, 3, 8);
    let sys = ExactSystem::new(&m, &bath, 20_000).unwrap();
    let lam = bath.reorganization_energy();
    let thermal = sys.thermal_state();
    let pe = m.excited_projector().unwrap();
    let pg = m.ground_projector().unwrap();
    let eg = linalg::matrix_unit(2, 0, 1);
    let ge = linalg::matrix_unit(2, 1, 0);

    // Absorption: |e><g| on the ground-state bath, two-sided.
    let mut wg = sys.lift(&pg).dot(&thermal).dot(&sys.lift(&pg));
    let z = linalg::trace(wg.view());
    wg.mapv_inplace(|x| x / z);
    let absorption = sys.evolve(&sys.lift(&eg).dot(&wg), 0.2, 60, EvolutionMode::TwoSided).unwrap();
    // Emission: relaxed excited state, |g><e| from the left, one-sided.
    let mut we = sys.lift(&pe).dot(&thermal).dot(&sys.lift(&pe));
    let z = linalg::trace(we.view());
    we.mapv_inplace(|x| x / z);
    let w0 = sys.lift(&ge).dot(&we);
    let emission = sys.evolve(&w0, 0.2, 60, EvolutionMode::OneSidedRightBath).unwrap();
    // The ground rows only see the bath, so two-sided evolution agrees.
    let two = sys.evolve(&w0, 0.2, 60, EvolutionMode::TwoSided).unwrap();

    for n in 0..60 {
        let t = 0.2 * n as f64;
        let g = discrete_lineshape(&bath, beta, t);
        let a = (c(0.0, -1.5 * t) - g).exp();
        let e = (c(0.0, (1.5 - 2.0 * lam) * t) - g).exp();
        assert!((absorption.values()[n][[0, 1]] - a).norm() < 2e-4, "absorption t={t}");
        assert!((emission.values()[n][[1, 0]] - e).norm() < 2e-4, "emission t={t}");
        assert!(linalg::max_abs((&two.values()[n] - &emission.values()[n]).view()) < 1e-10);
    }
}

#[test]
fn correlation_effect_grows_with_coupling() {
    let mut last = 0.0;
    for lambda in [0.1, 0.3, 0.5] {
        let m = model(ModelKind::PureDephasing, ohmic(lambda, 2.0, 2.0));
        let bath = small_bath(&m, 3, 4);
        let prep = make_preparation(&PrepSpec::Rotation { theta: std::f64::consts::PI / 8.0 }, Some(&m)).unwrap();
        let (a, b) = correlated_and_product(&m, &bath, &prep, 0.1, 101, &OracleOptions::default()).unwrap();
        assert!(linalg::max_abs((&a.values()[0] - &b.values()[0]).view()) < 1e-12);
        let ds = cumulative_trace_distance(&a, &b, 10.0).unwrap();
        assert!(ds > last, "lambda {lambda}: {ds} <= {last}");
        last = ds;
    }
}

#[test]
fn product_state_has_the_free_bath() {
    let m = model(ModelKind::SpinBoson, ohmic(0.1, 2.0, 1.0));
    let bath = small_bath(&m, 2, 4);
    let sys = ExactSystem::new(&m, &bath, 20_000).unwrap();
    let rho = CMatrix::from_shape_vec((2, 2), vec![c(0.7, 0.0), c(0.1, 0.1), c(0.1, -0.1), c(0.3, 0.0)]).unwrap();
    let w = sys.product_state(&rho).unwrap();
    assert!(linalg::max_abs((sys.reduce(&w) - &rho).view()) < 1e-14);
    assert!((linalg::trace(sys.free_bath_state().view()) - 1.0).norm() < 1e-14);
}
