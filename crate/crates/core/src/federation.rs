//! Training loops: ProFL, PoFL, the ∇L₁-only PFL baseline and centralized
//! performative gradient.
//!
//! Clients step in lockstep on a global clock. Every R iterations the server
//! selects the enrolled set and broadcasts θ̄; enrolled clients then take R
//! local steps and the server averages their models at the end of the round.
//! Idle clients keep their state untouched until their next enrollment.

use std::time::Instant;

use rand::seq::index::sample as sample_indices;
use rayon::prelude::*;

use crate::config::{Algorithm, ExperimentConfig, SampleSizeMode};
use crate::env::{draw_batch, performative_loss, BatchStreams, ContaminatedClient, Sample};
use crate::error::{check_len, Error, Result};
use crate::estimation::{
    adaptive_sample_size, fd_jacobian, grad_l1, grad_l2, robust_gradient, server_jacobian,
    AdaptiveSizerState, GradientEstimate, HistoryWindow, JacobianEstimate,
};
use crate::linalg::default_rank_tol;
use crate::model::{weighted_aggregate, ModelVector, ParameterBox};
use crate::rng::{stream, StreamLabel, SERVER};
use crate::trace::{RunTrace, TraceRow};

/// One client's local state.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub theta: ModelVector,
    pub window: HistoryWindow,
    pub sizer: Option<AdaptiveSizerState>,
    /// Batch size for the next local step.
    pub n: usize,
    /// Local steps taken so far.
    pub steps: usize,
}

/// The server's view of the federation.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub theta: ModelVector,
    pub round: usize,
    pub clusters: Option<Vec<usize>>,
    pub enrolled: Vec<usize>,
}

/// Clients enrolled for the round starting at `t`: a uniform subset of size
/// ⌈fraction · N⌉, sorted by id. Between round boundaries the previous set
/// is returned unchanged.
pub fn select_enrolled(t: usize, cfg: &ExperimentConfig, previous: &[usize]) -> Vec<usize> {
    if t % cfg.rounds != 0 && !previous.is_empty() {
        return previous.to_vec();
    }
    let n = cfg.num_clients;
    let k = cfg.enrolled_count();
    if k >= n {
        return (0..n).collect();
    }
    let mut rng = stream(cfg.seed, SERVER, StreamLabel::Enrollment, t as u64);
    let mut ids = sample_indices(&mut rng, n, k).into_vec();
    ids.sort_unstable();
    ids
}

/// What a client measured in phase one of an iteration.
struct Measured {
    clean: Vec<Sample>,
    g1: Vec<f64>,
    loss_mean: f64,
    removed: usize,
    drawn: usize,
    f_hat: Vec<f64>,
    max_grad_norm: f64,
    sigma2: f64,
}

#[derive(Debug, Clone, Copy)]
struct Plan {
    filter: Option<(f64, f64, usize)>,
    l2: bool,
    adaptive: bool,
    server_jacobian: bool,
}

impl Plan {
    fn for_config(cfg: &ExperimentConfig) -> Plan {
        let filter = cfg.robust_filter.map(|f| (f.c, f.j, f.bins));
        match cfg.algorithm {
            Algorithm::Profl => Plan {
                filter,
                l2: true,
                adaptive: matches!(cfg.sample_size, SampleSizeMode::Adaptive { .. }),
                server_jacobian: cfg.server_jacobian.is_some(),
            },
            Algorithm::Pofl | Algorithm::CentralizedPg => Plan {
                filter: None,
                l2: true,
                adaptive: false,
                server_jacobian: false,
            },
            Algorithm::Pfl => Plan {
                filter: None,
                l2: false,
                adaptive: false,
                server_jacobian: false,
            },
        }
    }
}

fn measure(
    client: &ContaminatedClient,
    theta: &[f64],
    n: usize,
    streams: &mut BatchStreams,
    plan: Plan,
) -> Result<Measured> {
    let env = client.env.as_ref();
    let batch = draw_batch(client, theta, n, streams);
    let drawn = batch.len();
    let (clean, g1, loss_mean, removed) = match plan.filter {
        Some((c, j, bins)) => {
            let out = robust_gradient(&batch, theta, env, c, j, bins)?;
            let (kept, _) = out.partition(batch);
            (kept, out.g1, out.loss_mean, out.removed)
        }
        None => {
            let (g1, loss_mean) = grad_l1(&batch, theta, env);
            (batch, g1, loss_mean, 0)
        }
    };
    let f_hat = if plan.l2 {
        env.estimate_f(&clean)?
    } else {
        Vec::new()
    };
    let (max_grad_norm, sigma2) = if plan.adaptive {
        let mut buf = vec![0.0; theta.len()];
        let mut gmax = 0.0f64;
        for s in &clean {
            env.grad(s, theta, &mut buf);
            gmax = gmax.max(buf.iter().map(|x| x * x).sum::<f64>().sqrt());
        }
        (gmax, env.data_variance(&clean))
    } else {
        (0.0, 0.0)
    };
    Ok(Measured {
        clean,
        g1,
        loss_mean,
        removed,
        drawn,
        f_hat,
        max_grad_norm,
        sigma2,
    })
}

/// θ ← Proj(θ − η g), failing on a non-finite step.
fn step(theta: &mut ModelVector, dir: &[f64], eta: f64, bounds: &ParameterBox) -> Result<()> {
    check_len(theta.dim(), dir.len(), "update direction")?;
    if dir.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite update direction".into()));
    }
    let coords = theta.coords_mut();
    for (c, g) in coords.iter_mut().zip(dir) {
        *c -= eta * g;
    }
    bounds.clamp_in_place(coords);
    Ok(())
}

/// Performative loss of θ̄, re-evaluated only when θ̄ moves.
struct Evaluator<'a> {
    clients: &'a [ContaminatedClient],
    n_eval: usize,
    exact: bool,
    seed: u64,
    cached: Option<(Vec<f64>, f64)>,
}

impl<'a> Evaluator<'a> {
    fn new(cfg: &ExperimentConfig, clients: &'a [ContaminatedClient]) -> Self {
        Evaluator {
            clients,
            n_eval: cfg.evaluation.n_eval,
            exact: cfg.evaluation.exact,
            seed: cfg.seed,
            cached: None,
        }
    }

    fn loss(&mut self, theta: &[f64], tick: usize) -> f64 {
        if let Some((t, v)) = &self.cached {
            if t.as_slice() == theta {
                return *v;
            }
        }
        let v = performative_loss(self.clients, theta, self.n_eval, self.exact, self.seed, tick as u64);
        self.cached = Some((theta.to_vec(), v));
        v
    }
}

fn check_clients(cfg: &ExperimentConfig, clients: &[ContaminatedClient]) -> Result<()> {
    cfg.validate()?;
    if clients.len() != cfg.num_clients {
        return Err(Error::Dimension {
            expected: cfg.num_clients,
            got: clients.len(),
            context: "number of clients",
        });
    }
    let d = cfg.dim();
    let f_dim = clients.first().map_or(0, |c| c.env.f_dim());
    for c in clients {
        check_len(d, c.env.dim(), "client environment dimension")?;
        if c.env.f_dim() != f_dim {
            return Err(Error::config("clients disagree on the dimension of f"));
        }
    }
    Ok(())
}

fn rank_tol(cfg: &ExperimentConfig) -> f64 {
    cfg.rank_tol
        .unwrap_or_else(|| default_rank_tol(cfg.dim(), cfg.window))
}

fn initial_sizer(cfg: &ExperimentConfig, plan: Plan) -> Result<Option<AdaptiveSizerState>> {
    match (plan.adaptive, &cfg.sample_size) {
        (
            true,
            SampleSizeMode::Adaptive {
                error_bound,
                confidence,
                n_min,
                n_max,
            },
        ) => Ok(Some(AdaptiveSizerState::new(*confidence, *error_bound, *n_min, *n_max)?)),
        _ => Ok(None),
    }
}

/// Runs the configured algorithm on freshly built clients.
pub fn run(cfg: &ExperimentConfig) -> Result<RunTrace> {
    let clients = cfg.build_clients()?;
    run_with_clients(cfg, &clients)
}

/// Dispatches on `cfg.algorithm`.
pub fn run_with_clients(cfg: &ExperimentConfig, clients: &[ContaminatedClient]) -> Result<RunTrace> {
    match cfg.algorithm {
        Algorithm::Profl => run_profl(cfg, clients),
        Algorithm::Pofl => run_pofl(cfg, clients),
        Algorithm::Pfl => run_pfl(cfg, clients),
        Algorithm::CentralizedPg => run_centralized_pg(cfg, clients),
    }
}

fn expect_algorithm(cfg: &ExperimentConfig, want: Algorithm) -> Result<()> {
    if cfg.algorithm != want {
        return Err(Error::config(format!(
            "configuration selects {}, not {want}",
            cfg.algorithm
        )));
    }
    Ok(())
}

/// ProFL: robust filtering, finite-difference Jacobian (local or per
/// cluster at the server) and optional adaptive sample sizes.
pub fn run_profl(cfg: &ExperimentConfig, clients: &[ContaminatedClient]) -> Result<RunTrace> {
    expect_algorithm(cfg, Algorithm::Profl)?;
    federated(cfg, clients)
}

/// PoFL: the same loop on raw batches, with local Jacobians and fixed n.
pub fn run_pofl(cfg: &ExperimentConfig, clients: &[ContaminatedClient]) -> Result<RunTrace> {
    expect_algorithm(cfg, Algorithm::Pofl)?;
    federated(cfg, clients)
}

/// PFL: plain local gradient steps on the decoupled risk.
pub fn run_pfl(cfg: &ExperimentConfig, clients: &[ContaminatedClient]) -> Result<RunTrace> {
    expect_algorithm(cfg, Algorithm::Pfl)?;
    federated(cfg, clients)
}

fn federated(cfg: &ExperimentConfig, clients: &[ContaminatedClient]) -> Result<RunTrace> {
    check_clients(cfg, clients)?;
    let plan = Plan::for_config(cfg);
    let tol = rank_tol(cfg);
    let bounds = &cfg.projection;
    let theta0 = cfg.initial_theta()?;
    let sizer = initial_sizer(cfg, plan)?;
    let n0 = cfg.sample_size.initial();
    let mut states: Vec<ClientState> = clients
        .iter()
        .enumerate()
        .map(|(id, _)| ClientState {
            id,
            theta: theta0.clone(),
            window: HistoryWindow::new(cfg.window),
            sizer: sizer.clone(),
            n: n0,
            steps: 0,
        })
        .collect();
    let mut server = ServerState {
        theta: theta0,
        round: 0,
        clusters: match (&cfg.server_jacobian, plan.server_jacobian) {
            (Some(sj), true) => Some(sj.resolve(cfg.num_clients)?),
            _ => None,
        },
        enrolled: Vec::new(),
    };
    let weights = cfg.weights();
    let mut eval = Evaluator::new(cfg, clients);
    let start = Instant::now();
    let mut trace = RunTrace::default();
    trace.push(
        TraceRow {
            t: 0,
            loss: eval.loss(server.theta.coords(), 0),
            theta: server.theta.clone(),
            enrolled: 0,
            removed_total: 0,
            n_per_client: vec![0; clients.len()],
        },
        start.elapsed(),
    )?;

    for t in 0..cfg.iterations {
        let iteration = |e: Error| e.at_iteration(t);
        if t % cfg.rounds == 0 {
            server.enrolled = select_enrolled(t, cfg, &server.enrolled);
            for &i in &server.enrolled {
                states[i].theta = server.theta.clone();
            }
        }
        let enrolled = &server.enrolled;
        let mut active: Vec<&mut ClientState> = states
            .iter_mut()
            .filter(|s| enrolled.binary_search(&s.id).is_ok())
            .collect();

        // Phase one: draw, filter, estimate f̂, record history.
        let measured: Vec<Measured> = active
            .par_iter_mut()
            .map(|st| {
                let client = &clients[st.id];
                let mut streams = BatchStreams::open(cfg.seed, st.id as u64, t as u64);
                let m = measure(client, st.theta.coords(), st.n, &mut streams, plan)?;
                if plan.l2 {
                    st.window.push(st.theta.coords().to_vec(), m.f_hat.clone())?;
                }
                Ok(m)
            })
            .collect::<Result<_>>()
            .map_err(iteration)?;

        // Phase two: Jacobians. A client past warm-up gets one; warm-up
        // clients and unusable estimates fall back to g1.
        let ready: Vec<bool> = active.iter().map(|st| plan.l2 && st.steps >= cfg.window + 1).collect();
        let mut jacobians: Vec<Option<JacobianEstimate>> = vec![None; active.len()];
        if let Some(clusters) = &server.clusters {
            let mut ids: Vec<usize> = active
                .iter()
                .zip(&ready)
                .filter(|(_, r)| **r)
                .map(|(st, _)| clusters[st.id])
                .collect();
            ids.sort_unstable();
            ids.dedup();
            for c in ids {
                let members: Vec<usize> = (0..active.len())
                    .filter(|&k| ready[k] && clusters[active[k].id] == c)
                    .collect();
                let windows: Vec<&HistoryWindow> = members.iter().map(|&k| &active[k].window).collect();
                let jac = server_jacobian(&windows, tol).map_err(iteration)?;
                for k in members {
                    jacobians[k] = Some(jac.clone());
                }
            }
        } else {
            for (k, st) in active.iter().enumerate() {
                if ready[k] {
                    jacobians[k] = Some(fd_jacobian(&st.window, tol).map_err(iteration)?);
                }
            }
        }

        // Phase three: local updates and sample-size adaptation.
        let eta = cfg.eta;
        let h = cfg.window;
        active
            .par_iter_mut()
            .zip(measured.par_iter())
            .zip(jacobians.par_iter())
            .map(|((st, m), jac)| {
                let env = clients[st.id].env.as_ref();
                let usable = jac.as_ref().filter(|j| j.usable());
                let g2 = match usable {
                    Some(j) => Some(grad_l2(&m.clean, st.theta.coords(), env, &j.matrix, &m.f_hat)?.g2),
                    None => None,
                };
                let est = GradientEstimate {
                    g1: m.g1.clone(),
                    g2,
                    loss_mean: m.loss_mean,
                    n_used: m.clean.len(),
                    n_removed: m.removed,
                };
                let theta_before = st.theta.coords().to_vec();
                step(&mut st.theta, &est.direction(), eta, bounds)?;
                st.steps += 1;
                if let Some(sizer) = st.sizer.as_mut() {
                    sizer.observe(
                        m.loss_mean,
                        m.max_grad_norm,
                        m.sigma2,
                        usable.map(|j| (theta_before.as_slice(), &j.matrix)),
                        h,
                    );
                    if st.window.is_full() {
                        st.n = adaptive_sample_size(sizer, h, eta, st.window.delta_theta_norm());
                    }
                }
                Ok(())
            })
            .collect::<Result<()>>()
            .map_err(iteration)?;

        let mut n_per_client = vec![0; clients.len()];
        let mut removed_total = 0;
        for (st, m) in active.iter().zip(&measured) {
            n_per_client[st.id] = m.drawn;
            removed_total += m.removed;
        }
        let n_enrolled = active.len();
        drop(active);

        if (t + 1) % cfg.rounds == 0 {
            let models: Vec<ModelVector> = server.enrolled.iter().map(|&i| states[i].theta.clone()).collect();
            let w: Vec<f64> = server.enrolled.iter().map(|&i| weights[i]).collect();
            if models.is_empty() {
                return Err(Error::EmptyEnrollment.at_iteration(t));
            }
            let mut agg = weighted_aggregate(&models, &w).map_err(iteration)?;
            bounds.clamp_in_place(agg.coords_mut());
            server.theta = agg;
            server.round += 1;
        }
        trace.push(
            TraceRow {
                t: t + 1,
                loss: eval.loss(server.theta.coords(), t + 1),
                theta: server.theta.clone(),
                enrolled: n_enrolled,
                removed_total,
                n_per_client,
            },
            start.elapsed(),
        )?;
    }
    Ok(trace)
}

/// Centralized performative gradient on the pooled data of all clients:
/// one model, one history window, one Jacobian, an update every iteration.
pub fn run_centralized_pg(cfg: &ExperimentConfig, clients: &[ContaminatedClient]) -> Result<RunTrace> {
    expect_algorithm(cfg, Algorithm::CentralizedPg)?;
    check_clients(cfg, clients)?;
    let tol = rank_tol(cfg);
    let bounds = &cfg.projection;
    let mut theta = cfg.initial_theta()?;
    let mut window = HistoryWindow::new(cfg.window);
    let n = cfg.sample_size.initial();
    let env = clients[0].env.as_ref();
    let mut eval = Evaluator::new(cfg, clients);
    let start = Instant::now();
    let mut trace = RunTrace::default();
    trace.push(
        TraceRow {
            t: 0,
            loss: eval.loss(theta.coords(), 0),
            theta: theta.clone(),
            enrolled: 0,
            removed_total: 0,
            n_per_client: vec![0; clients.len()],
        },
        start.elapsed(),
    )?;
    for t in 0..cfg.iterations {
        let iteration = |e: Error| e.at_iteration(t);
        let batches: Vec<Vec<Sample>> = clients
            .par_iter()
            .enumerate()
            .map(|(i, c)| {
                let mut streams = BatchStreams::open(cfg.seed, i as u64, t as u64);
                draw_batch(c, theta.coords(), n, &mut streams)
            })
            .collect();
        let n_per_client: Vec<usize> = batches.iter().map(Vec::len).collect();
        let pool: Vec<Sample> = batches.into_iter().flatten().collect();
        let (g1, _) = grad_l1(&pool, theta.coords(), env);
        let f_hat = env.estimate_f(&pool).map_err(iteration)?;
        window.push(theta.coords().to_vec(), f_hat.clone()).map_err(iteration)?;
        let mut dir = g1;
        if t >= cfg.window + 1 {
            let jac = fd_jacobian(&window, tol).map_err(iteration)?;
            if jac.usable() {
                let g2 = grad_l2(&pool, theta.coords(), env, &jac.matrix, &f_hat)
                    .map_err(iteration)?
                    .g2;
                dir.iter_mut().zip(&g2).for_each(|(a, b)| *a += b);
            }
        }
        step(&mut theta, &dir, cfg.eta, bounds).map_err(iteration)?;
        trace.push(
            TraceRow {
                t: t + 1,
                loss: eval.loss(theta.coords(), t + 1),
                theta: theta.clone(),
                enrolled: clients.len(),
                removed_total: 0,
                n_per_client,
            },
            start.elapsed(),
        )?;
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pricing_cfg(algorithm: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml_str(&format!(
            r#"
            algorithm = "{algorithm}"
            eta = 0.02
            H = 150
            R = 1
            T = 400
            num_clients = 1
            initial_model = [0.5]
            robust_filter = {{ c = 0.0001, j = 0.01 }}
            sample_size = {{ mode = "fixed", n = 2000 }}
            projection = {{ lower = [0.0], upper = [10.0] }}
            [environment]
            kind = "gaussian-demand-pricing"
            dim = 1
            mu0 = 6.0
            gamma = 2.0
            sigma = 1.0
            "#
        ))
        .unwrap()
    }

    #[test]
    fn full_enrollment_and_fraction() {
        let mut cfg = pricing_cfg("profl");
        cfg.num_clients = 10;
        assert_eq!(select_enrolled(0, &cfg, &[]), (0..10).collect::<Vec<_>>());
        cfg.enrollment_fraction = 0.3;
        let a = select_enrolled(5, &cfg, &[]);
        assert_eq!(a.len(), 3);
        assert_eq!(a, select_enrolled(5, &cfg, &[]));
        cfg.rounds = 5;
        assert_eq!(select_enrolled(6, &cfg, &a), a);
    }

    #[test]
    fn profl_and_pfl_reach_their_fixed_points() {
        let po = run(&pricing_cfg("profl")).unwrap();
        let ps = run(&pricing_cfg("pfl")).unwrap();
        assert_eq!(po.rows.len(), 401);
        assert!((po.final_theta().unwrap()[0] - 1.5).abs() < 0.1, "{:?}", po.final_theta());
        assert!((ps.final_theta().unwrap()[0] - 3.0).abs() < 0.1);
        assert!(po.final_loss() < ps.final_loss());
    }

    #[test]
    fn centralized_pg_matches_pofl_for_one_client() {
        let a = run(&pricing_cfg("pofl")).unwrap();
        let b = run(&pricing_cfg("centralized-pg")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_algorithm_is_rejected() {
        let cfg = pricing_cfg("pfl");
        let clients = cfg.build_clients().unwrap();
        assert!(run_profl(&cfg, &clients).is_err());
    }

    #[test]
    fn aggregation_only_at_round_ends() {
        let mut cfg = pricing_cfg("profl");
        cfg.num_clients = 3;
        cfg.rounds = 4;
        cfg.iterations = 40;
        let trace = run(&cfg).unwrap();
        for w in trace.rows.windows(2) {
            if w[1].t % 4 != 0 {
                assert_eq!(w[0].theta, w[1].theta);
            }
        }
    }
}
