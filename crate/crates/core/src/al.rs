//! The federated active-learning loop (cycles and budgets) and all selection
//! functions, including the variable-budget energy-guided nearest-source
//! selection (FEDALV), its fixed-quota variant (FEDAL), and the exact
//! earth-mover selection evaluator.

use crate::datagen::{ClientDataset, FederationSplit};
use crate::energy::free_energy;
use crate::error::{Error, Result};
use crate::fed::{run_fdg, FedConfig, Ledger, Payload};
use crate::model::{forward_eval, ModelConfig, ModelParams};
use crate::numcore::{softmax, Matrix, Rng};
use serde::{Deserialize, Serialize};

/// Total query budget and its per-client breakdown for one cycle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Budget {
    pub total: usize,
    pub per_client: Vec<usize>,
}

impl Budget {
    pub fn validate(&self, sources: &[ClientDataset]) -> Result<()> {
        if self.per_client.iter().sum::<usize>() != self.total {
            return Err(Error::argument("per-client budgets do not sum to the total"));
        }
        if self.per_client.len() != sources.len() {
            return Err(Error::argument("budget has wrong number of clients"));
        }
        for (k, (&b, ds)) in self.per_client.iter().zip(sources).enumerate() {
            if b > ds.unlabeled_indices().len() {
                return Err(Error::argument(format!(
                    "budget {b} exceeds unlabeled pool of client {k}"
                )));
            }
        }
        Ok(())
    }
}

/// Even split of a total budget: `floor(B/K)` each, remainder distributed one
/// query at a time to clients in ascending id order.
pub fn split_budget(total: usize, num_clients: usize) -> Vec<usize> {
    let base = total / num_clients;
    let rem = total % num_clients;
    (0..num_clients)
        .map(|k| base + usize::from(k < rem))
        .collect()
}

/// Per-client lists of newly selected unlabeled sample indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionResult {
    pub per_client: Vec<Vec<usize>>,
}

impl SelectionResult {
    pub fn total(&self) -> usize {
        self.per_client.iter().map(|v| v.len()).sum()
    }

    pub fn budget(&self) -> Budget {
        Budget {
            total: self.total(),
            per_client: self.per_client.iter().map(|v| v.len()).collect(),
        }
    }

    /// Indices must be unique within a client and currently unlabeled.
    pub fn validate(&self, sources: &[ClientDataset]) -> Result<()> {
        if self.per_client.len() != sources.len() {
            return Err(Error::argument("selection has wrong number of clients"));
        }
        for (k, (sel, ds)) in self.per_client.iter().zip(sources).enumerate() {
            let mut seen = vec![false; ds.len()];
            for &i in sel {
                if i >= ds.len() {
                    return Err(Error::argument(format!(
                        "client {k} selection index {i} out of range"
                    )));
                }
                if seen[i] {
                    return Err(Error::argument(format!(
                        "client {k} selection repeats index {i}"
                    )));
                }
                if ds.labeled_mask[i] {
                    return Err(Error::argument(format!(
                        "client {k} selection index {i} is already labeled"
                    )));
                }
                seen[i] = true;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectorKind {
    Random,
    Entropy,
    Coreset,
    EnergySource,
    Fedal,
    Fedalv,
}

impl SelectorKind {
    pub const ALL: [SelectorKind; 6] = [
        SelectorKind::Random,
        SelectorKind::Entropy,
        SelectorKind::Coreset,
        SelectorKind::EnergySource,
        SelectorKind::Fedal,
        SelectorKind::Fedalv,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SelectorKind::Random => "random",
            SelectorKind::Entropy => "entropy",
            SelectorKind::Coreset => "coreset",
            SelectorKind::EnergySource => "energy_source",
            SelectorKind::Fedal => "fedal",
            SelectorKind::Fedalv => "fedalv",
        }
    }
}

impl std::str::FromStr for SelectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(SelectorKind::Random),
            "entropy" => Ok(SelectorKind::Entropy),
            "coreset" => Ok(SelectorKind::Coreset),
            "energy_source" | "energy-source" | "energy" => Ok(SelectorKind::EnergySource),
            "fedal" => Ok(SelectorKind::Fedal),
            "fedalv" => Ok(SelectorKind::Fedalv),
            other => Err(Error::argument(format!("unknown selector {other:?}"))),
        }
    }
}

fn check_budgets(sources: &[ClientDataset], budget_per_client: &[usize]) -> Result<()> {
    if budget_per_client.len() != sources.len() {
        return Err(Error::argument(format!(
            "{} budgets for {} clients",
            budget_per_client.len(),
            sources.len()
        )));
    }
    for (k, (&b, ds)) in budget_per_client.iter().zip(sources).enumerate() {
        let pool = ds.unlabeled_indices().len();
        if b > pool {
            return Err(Error::argument(format!(
                "budget {b} exceeds unlabeled pool {pool} of client {k}"
            )));
        }
    }
    Ok(())
}

/// Uniform selection without replacement per client.
pub fn select_random(
    sources: &[ClientDataset],
    budget_per_client: &[usize],
    rng: &mut Rng,
) -> Result<SelectionResult> {
    check_budgets(sources, budget_per_client)?;
    let per_client = sources
        .iter()
        .zip(budget_per_client)
        .map(|(ds, &b)| {
            let pool = ds.unlabeled_indices();
            rng.sample_without_replacement(pool.len(), b)
                .into_iter()
                .map(|i| pool[i])
                .collect()
        })
        .collect();
    Ok(SelectionResult { per_client })
}

/// Rank rows by a score, descending; ties resolve to the lower index.
/// Returns the top `k` row indices.
fn top_k_by_score(indices: &[usize], scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..indices.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(indices[a].cmp(&indices[b]))
    });
    let mut out: Vec<usize> = order[..k].iter().map(|&i| indices[i]).collect();
    out.sort_unstable();
    out
}

/// Predictive entropy of the global model, highest first.
pub fn select_entropy(
    global_params: &ModelParams,
    sources: &[ClientDataset],
    budget_per_client: &[usize],
) -> Result<SelectionResult> {
    check_budgets(sources, budget_per_client)?;
    let mut per_client = Vec::with_capacity(sources.len());
    for (ds, &b) in sources.iter().zip(budget_per_client) {
        let pool = ds.unlabeled_indices();
        if b == 0 {
            per_client.push(Vec::new());
            continue;
        }
        let x = ds.features.select_rows(&pool);
        let trace = forward_eval(global_params, &x)?;
        let scores: Vec<f64> = (0..pool.len())
            .map(|i| predictive_entropy(trace.logits.row(i)))
            .collect();
        per_client.push(top_k_by_score(&pool, &scores, b));
    }
    Ok(SelectionResult { per_client })
}

/// `-sum p ln p` of the softmax distribution.
pub fn predictive_entropy(logits: &[f64]) -> f64 {
    softmax(logits)
        .iter()
        .map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 })
        .sum()
}

/// k-center greedy in latent space: repeatedly pick the unlabeled point
/// farthest from its nearest labeled-or-selected point.
pub fn select_coreset(
    global_params: &ModelParams,
    sources: &[ClientDataset],
    budget_per_client: &[usize],
) -> Result<SelectionResult> {
    check_budgets(sources, budget_per_client)?;
    let mut per_client = Vec::with_capacity(sources.len());
    for (k, (ds, &b)) in sources.iter().zip(budget_per_client).enumerate() {
        let labeled = ds.labeled_indices();
        if labeled.is_empty() {
            return Err(Error::argument(format!(
                "coreset selection needs at least one labeled sample in client {k}"
            )));
        }
        let pool = ds.unlabeled_indices();
        if b == 0 {
            per_client.push(Vec::new());
            continue;
        }
        let trace = forward_eval(global_params, &ds.features)?;
        let z = &trace.z;

        // Distance of each candidate to its nearest center so far.
        let mut min_dist: Vec<f64> = pool
            .iter()
            .map(|&i| {
                labeled
                    .iter()
                    .map(|&c| sq_dist(z.row(i), z.row(c)))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let mut taken = vec![false; pool.len()];
        let mut chosen = Vec::with_capacity(b);
        for _ in 0..b {
            let mut best: Option<usize> = None;
            for (ci, &d) in min_dist.iter().enumerate() {
                if taken[ci] {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some(bi) => {
                        d > min_dist[bi] || (d == min_dist[bi] && pool[ci] < pool[bi])
                    }
                };
                if better {
                    best = Some(ci);
                }
            }
            let pick = best.unwrap();
            taken[pick] = true;
            chosen.push(pool[pick]);
            for (ci, d) in min_dist.iter_mut().enumerate() {
                if !taken[ci] {
                    *d = d.min(sq_dist(z.row(pool[ci]), z.row(pool[pick])));
                }
            }
        }
        chosen.sort_unstable();
        per_client.push(chosen);
    }
    Ok(SelectionResult { per_client })
}

/// Free energy plus negated top-2 softmax margin, highest first.
pub fn select_energy_source(
    global_params: &ModelParams,
    sources: &[ClientDataset],
    budget_per_client: &[usize],
) -> Result<SelectionResult> {
    check_budgets(sources, budget_per_client)?;
    let mut per_client = Vec::with_capacity(sources.len());
    for (ds, &b) in sources.iter().zip(budget_per_client) {
        let pool = ds.unlabeled_indices();
        if b == 0 {
            per_client.push(Vec::new());
            continue;
        }
        let x = ds.features.select_rows(&pool);
        let trace = forward_eval(global_params, &x)?;
        let scores: Vec<f64> = (0..pool.len())
            .map(|i| energy_source_score(trace.logits.row(i)))
            .collect::<Result<_>>()?;
        per_client.push(top_k_by_score(&pool, &scores, b));
    }
    Ok(SelectionResult { per_client })
}

/// `F(x) - (p1 - p2)`: free energy plus margin uncertainty.
pub fn energy_source_score(logits: &[f64]) -> Result<f64> {
    let f = free_energy(logits)?;
    let mut probs = softmax(logits);
    probs.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let margin = probs[0] - probs.get(1).copied().unwrap_or(0.0);
    Ok(f - margin)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// A source candidate in the cross-client greedy assignment.
struct Candidate {
    client: usize,
    index: usize,
    taken: bool,
}

/// Shared greedy core of the FEDALV/FEDAL selection: walk the top-budget
/// target samples in descending free-energy order and give each one the
/// nearest untaken source candidate in latent space, optionally constrained
/// by per-client quotas. Distance ties resolve to the lower (client, index).
fn nearest_source_assignment(
    target_z: &Matrix,
    candidates: &mut [Candidate],
    candidate_z: &Matrix,
    quotas: Option<&[usize]>,
    num_clients: usize,
) -> Result<SelectionResult> {
    let mut remaining: Vec<usize> = match quotas {
        Some(q) => q.to_vec(),
        None => vec![usize::MAX; num_clients],
    };
    let mut per_client: Vec<Vec<usize>> = vec![Vec::new(); num_clients];
    for t in 0..target_z.rows() {
        let tz = target_z.row(t);
        let mut best: Option<(usize, f64)> = None;
        for (ci, cand) in candidates.iter().enumerate() {
            if cand.taken || remaining[cand.client] == 0 {
                continue;
            }
            let d = sq_dist(tz, candidate_z.row(ci));
            let better = match best {
                None => true,
                Some((bi, bd)) => {
                    d < bd
                        || (d == bd
                            && (cand.client, cand.index)
                                < (candidates[bi].client, candidates[bi].index))
                }
            };
            if better {
                best = Some((ci, d));
            }
        }
        let (pick, _) = best.ok_or_else(|| {
            Error::argument("ran out of eligible source candidates during assignment")
        })?;
        candidates[pick].taken = true;
        if remaining[candidates[pick].client] != usize::MAX {
            remaining[candidates[pick].client] -= 1;
        }
        per_client[candidates[pick].client].push(candidates[pick].index);
    }
    for sel in &mut per_client {
        sel.sort_unstable();
    }
    Ok(SelectionResult { per_client })
}

/// Scoring context shared by the target side of FEDALV/FEDAL: the top-budget
/// unlabeled target rows by free energy (descending) and their latents.
pub struct TargetRanking {
    /// Target row indices, descending free energy.
    pub rows: Vec<usize>,
    /// Latents of those rows, in the same order.
    pub latents: Matrix,
    /// Free energies of those rows, in the same order.
    pub energies: Vec<f64>,
}

/// Rank the target's unlabeled pool by free energy and keep the top `budget`.
pub fn rank_target_by_energy(
    global_params: &ModelParams,
    target: &ClientDataset,
    budget: usize,
) -> Result<TargetRanking> {
    let pool = target.unlabeled_indices();
    if pool.len() < budget {
        return Err(Error::argument(format!(
            "target unlabeled pool {} smaller than budget {budget}",
            pool.len()
        )));
    }
    let x = target.features.select_rows(&pool);
    let trace = forward_eval(global_params, &x)?;
    let energies: Vec<f64> = (0..pool.len())
        .map(|i| free_energy(trace.logits.row(i)))
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| {
        energies[b]
            .partial_cmp(&energies[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(pool[a].cmp(&pool[b]))
    });
    order.truncate(budget);
    let rows: Vec<usize> = order.iter().map(|&i| pool[i]).collect();
    let latents = trace.z.select_rows(&order);
    let energies = order.iter().map(|&i| energies[i]).collect();
    Ok(TargetRanking {
        rows,
        latents,
        energies,
    })
}

fn source_candidates(
    global_params: &ModelParams,
    sources: &[ClientDataset],
) -> Result<(Vec<Candidate>, Matrix)> {
    let latent_dim = global_params.config.latent_dim;
    let mut candidates = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, ds) in sources.iter().enumerate() {
        let pool = ds.unlabeled_indices();
        if pool.is_empty() {
            continue;
        }
        let x = ds.features.select_rows(&pool);
        let trace = forward_eval(global_params, &x)?;
        for (i, &index) in pool.iter().enumerate() {
            candidates.push(Candidate {
                client: k,
                index,
                taken: false,
            });
            rows.push(trace.z.row(i).to_vec());
        }
    }
    let z = if rows.is_empty() {
        Matrix::zeros(0, latent_dim)
    } else {
        Matrix::from_rows(&rows)?
    };
    Ok((candidates, z))
}

/// Variable-budget selection: pair each of the `total_budget` highest-energy
/// target samples with its nearest unlabeled source sample across all
/// clients. Per-client budgets emerge from the assignment.
pub fn select_fedalv(
    global_params: &ModelParams,
    sources: &[ClientDataset],
    target: &ClientDataset,
    total_budget: usize,
) -> Result<SelectionResult> {
    let available: usize = sources
        .iter()
        .map(|s| s.unlabeled_indices().len())
        .sum();
    if available < total_budget {
        return Err(Error::argument(format!(
            "total unlabeled source pool {available} smaller than budget {total_budget}"
        )));
    }
    let ranking = rank_target_by_energy(global_params, target, total_budget)?;
    let (mut candidates, candidate_z) = source_candidates(global_params, sources)?;
    nearest_source_assignment(
        &ranking.latents,
        &mut candidates,
        &candidate_z,
        None,
        sources.len(),
    )
}

/// Fixed-quota variant: the same energy-guided assignment, but each client's
/// intake is capped by the even floor/remainder split of the total budget.
pub fn select_fedal(
    global_params: &ModelParams,
    sources: &[ClientDataset],
    target: &ClientDataset,
    total_budget: usize,
) -> Result<SelectionResult> {
    let quotas = split_budget(total_budget, sources.len());
    check_budgets(sources, &quotas)?;
    let ranking = rank_target_by_energy(global_params, target, total_budget)?;
    let (mut candidates, candidate_z) = source_candidates(global_params, sources)?;
    nearest_source_assignment(
        &ranking.latents,
        &mut candidates,
        &candidate_z,
        Some(&quotas),
        sources.len(),
    )
}

/// Exact earth mover's distance between two equal-size point sets with
/// uniform weights: the optimal-assignment mean Euclidean distance.
pub fn emd(set_a: &Matrix, set_b: &Matrix) -> Result<f64> {
    if set_a.rows() != set_b.rows() {
        return Err(Error::argument(format!(
            "emd requires equal-size sets, got {} and {}",
            set_a.rows(),
            set_b.rows()
        )));
    }
    if set_a.rows() == 0 {
        return Err(Error::argument("emd of empty sets"));
    }
    if set_a.cols() != set_b.cols() {
        return Err(Error::argument("emd sets have differing dimensions"));
    }
    let n = set_a.rows();
    let mut cost = vec![vec![0.0; n]; n];
    for (i, row) in cost.iter_mut().enumerate() {
        for (j, c) in row.iter_mut().enumerate() {
            *c = sq_dist(set_a.row(i), set_b.row(j)).sqrt();
        }
    }
    Ok(hungarian_min_cost(&cost) / n as f64)
}

/// Minimum-cost perfect matching on a square cost matrix
/// (potentials/shortest-augmenting-path formulation, O(n^3)).
fn hungarian_min_cost(cost: &[Vec<f64>]) -> f64 {
    let n = cost.len();
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut assigned_row = vec![0usize; n + 1]; // column -> row (1-based, 0 = free)
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        assigned_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = assigned_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[assigned_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if assigned_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            assigned_row[j0] = assigned_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut total = 0.0;
    for j in 1..=n {
        total += cost[assigned_row[j] - 1][j - 1];
    }
    total
}

/// Active-learning campaign settings. `fed.rounds` is the per-cycle training
/// length (models are re-initialised fresh every cycle).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FalConfig {
    pub fed: FedConfig,
    pub cycles: usize,
    pub budget: usize,
    pub initial_fraction: f64,
    pub selector: SelectorKind,
}

impl FalConfig {
    pub fn validate(&self) -> Result<()> {
        self.fed.validate()?;
        if self.cycles == 0 {
            return Err(Error::config("cycles must be >= 1"));
        }
        if self.fed.rounds == 0 {
            return Err(Error::config("per-cycle rounds must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.initial_fraction) {
            return Err(Error::config("initial_fraction must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Everything recorded for one completed cycle.
#[derive(Debug, Clone)]
pub struct CycleRecord {
    pub cycle: usize,
    pub selector: SelectorKind,
    /// Total labeled source samples after this cycle's queries.
    pub labeled_total: usize,
    /// Per-client query counts this cycle.
    pub budgets: Vec<usize>,
    pub target_acc: f64,
    pub source_acc_mean: f64,
    /// Earth mover's distance between this cycle's selected latents and the
    /// top-budget target latents; NaN when the budget is zero.
    pub emd: f64,
    /// Global model at the end of this cycle's training.
    pub global_params: ModelParams,
    pub selection: SelectionResult,
}

#[derive(Debug)]
pub struct FalRun {
    pub cycles: Vec<CycleRecord>,
    pub ledger: Ledger,
    pub initial_labeled: usize,
}

impl FalRun {
    /// `cycle,selector,labeled_total,budget_client_0..K-1,target_acc,source_acc_mean,emd`
    pub fn to_metrics_csv(&self) -> String {
        let k = self
            .cycles
            .first()
            .map(|c| c.budgets.len())
            .unwrap_or_default();
        let mut out = String::from("cycle,selector,labeled_total");
        for i in 0..k {
            out.push_str(&format!(",budget_client_{i}"));
        }
        out.push_str(",target_acc,source_acc_mean,emd\n");
        for rec in &self.cycles {
            out.push_str(&format!(
                "{},{},{}",
                rec.cycle,
                rec.selector.name(),
                rec.labeled_total
            ));
            for b in &rec.budgets {
                out.push_str(&format!(",{b}"));
            }
            out.push_str(&format!(
                ",{},{},{}\n",
                rec.target_acc, rec.source_acc_mean, rec.emd
            ));
        }
        out
    }
}

/// Latents of the selected samples, stacked client-by-client in id order.
fn selection_latents(
    global_params: &ModelParams,
    sources: &[ClientDataset],
    selection: &SelectionResult,
) -> Result<Matrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ds, sel) in sources.iter().zip(&selection.per_client) {
        if sel.is_empty() {
            continue;
        }
        let x = ds.features.select_rows(sel);
        let trace = forward_eval(global_params, &x)?;
        for i in 0..sel.len() {
            rows.push(trace.z.row(i).to_vec());
        }
    }
    Matrix::from_rows(&rows)
}

/// Run the full federated active-learning campaign: per cycle, train fresh
/// models on the current labeled pools, query new samples with the selector,
/// and let the simulated annotators reveal their labels.
pub fn run_fal(
    config: &FalConfig,
    model_config: &ModelConfig,
    federation: &FederationSplit,
) -> Result<FalRun> {
    config.validate()?;
    let mut federation = federation.clone();
    let root = Rng::new(config.fed.seed);
    let al_root = root.split(7001);

    // Initial labeled pools.
    for (k, ds) in federation.sources.iter_mut().enumerate() {
        let mut pool_rng = al_root.split(k as u64);
        crate::datagen::init_labeled_pool(ds, config.initial_fraction, &mut pool_rng)?;
    }
    let initial_labeled: usize = federation.sources.iter().map(|s| s.labeled_count()).sum();

    let mut ledger = Ledger::new();
    let mut records = Vec::with_capacity(config.cycles);
    let mut selection_rng = al_root.split(5000);

    for cycle in 1..=config.cycles {
        // Fresh model per cycle, new seed stream.
        let cycle_seed = al_root.split(9000 + cycle as u64).next_u64();
        let fed_config = FedConfig {
            seed: cycle_seed,
            ..config.fed.clone()
        };
        let run = run_fdg(&fed_config, model_config, &federation)?;
        ledger.extend(run.ledger);
        let global_params = run.server.global_params;
        let last = run
            .history
            .comm_rounds
            .last()
            .ok_or_else(|| Error::state("training produced no communication rounds"))?;
        let target_acc = last.target_acc;
        let source_acc_mean =
            last.source_val_acc.iter().sum::<f64>() / last.source_val_acc.len() as f64;

        let k = federation.sources.len();
        let quotas = split_budget(config.budget, k);
        let selection = match config.selector {
            SelectorKind::Random => {
                select_random(&federation.sources, &quotas, &mut selection_rng)?
            }
            SelectorKind::Entropy => select_entropy(&global_params, &federation.sources, &quotas)?,
            SelectorKind::Coreset => select_coreset(&global_params, &federation.sources, &quotas)?,
            SelectorKind::EnergySource => {
                select_energy_source(&global_params, &federation.sources, &quotas)?
            }
            SelectorKind::Fedal => select_fedal(
                &global_params,
                &federation.sources,
                &federation.target,
                config.budget,
            )?,
            SelectorKind::Fedalv => select_fedalv(
                &global_params,
                &federation.sources,
                &federation.target,
                config.budget,
            )?,
        };
        selection.validate(&federation.sources)?;
        debug_assert_eq!(selection.total(), config.budget);

        // Selection evaluator: how close the chosen source latents sit to the
        // high-energy target latents.
        let emd_value = if config.budget == 0 {
            f64::NAN
        } else {
            let ranking =
                rank_target_by_energy(&global_params, &federation.target, config.budget)?;
            ledger.client_to_server(
                federation.sources.len(),
                Payload::EnergyScalars(ranking.energies.clone()),
            );
            ledger.client_to_server(
                federation.sources.len(),
                Payload::LatentVectors(ranking.latents.clone()),
            );
            let selected = selection_latents(&global_params, &federation.sources, &selection)?;
            ledger.client_to_server(usize::MAX, Payload::LatentVectors(selected.clone()));
            emd(&selected, &ranking.latents)?
        };

        // Annotation round: queried indices go back to the clients; the
        // simulated oracles reveal the held-back ground-truth labels.
        for (k, sel) in selection.per_client.iter().enumerate() {
            ledger.server_to_client(k, Payload::SampleIndices(sel.clone()));
            for &i in sel {
                federation.sources[k].labeled_mask[i] = true;
            }
        }

        let labeled_total: usize = federation.sources.iter().map(|s| s.labeled_count()).sum();
        records.push(CycleRecord {
            cycle,
            selector: config.selector,
            labeled_total,
            budgets: selection.budget().per_client,
            target_acc,
            source_acc_mean,
            emd: emd_value,
            global_params,
            selection,
        });
    }

    debug_assert!(ledger.server_bound_kinds_allowed());
    Ok(FalRun {
        cycles: records,
        ledger,
        initial_labeled,
    })
}
