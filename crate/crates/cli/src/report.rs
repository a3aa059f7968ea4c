//! Compile-time utilization and cost reporting.

use serde::Serialize;

use neurofab::error::{Error, Result};
use neurofab::mapping::{recount, DeploymentImage};
use neurofab::model::NetworkSpec;
use neurofab::partition::{CoreConstraints, CostWeights, OptimizeOutcome, ResourceTally};

#[derive(Debug, Clone, Serialize)]
pub struct UtilStat {
    pub mean: f64,
    pub max: f64,
}

fn util_stat(values: impl Iterator<Item = f64> + Clone) -> UtilStat {
    let n = values.clone().count().max(1) as f64;
    UtilStat {
        mean: values.clone().sum::<f64>() / n,
        max: values.fold(0.0, f64::max),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CoreUtil {
    pub neurons: f64,
    pub input_axons: f64,
    pub output_axons: f64,
    pub synapses: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CostTerms {
    pub cores: f64,
    pub synapses: f64,
    pub axons: f64,
    pub offchip: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LayerReport {
    pub id: String,
    pub cores: u64,
    pub grid: [u32; 3],
    pub cost: f64,
    pub cost_terms: CostTerms,
    pub neurons: UtilStat,
    pub input_axons: UtilStat,
    pub output_axons: UtilStat,
    pub synapses: UtilStat,
    pub per_core: Vec<CoreUtil>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompileReport {
    pub model: String,
    pub chips_used: u32,
    pub total_cores: u64,
    pub total_neurons: u64,
    pub mean_neuron_utilization: f64,
    pub total_cost: f64,
    pub layers: Vec<LayerReport>,
}

impl CompileReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "layer,cores,grid,neuron_util_mean,input_axon_util_mean,output_axon_util_mean,synapse_util_mean,cost\n",
        );
        for l in &self.layers {
            out.push_str(&format!(
                "{},{},{}x{}x{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                l.id,
                l.cores,
                l.grid[0],
                l.grid[1],
                l.grid[2],
                l.neurons.mean,
                l.input_axons.mean,
                l.output_axons.mean,
                l.synapses.mean,
                l.cost
            ));
        }
        out
    }
}

fn layer_report(
    id: &str,
    grid: (u32, u32, u32),
    tally: &ResourceTally,
    w: &CostWeights,
    c: &CoreConstraints,
) -> LayerReport {
    let agg = tally.aggregate();
    let per_core: Vec<CoreUtil> = tally
        .per_core
        .iter()
        .map(|cc| CoreUtil {
            neurons: cc.neurons as f64 / c.max_neurons_per_core as f64,
            input_axons: cc.input_axons as f64 / c.max_input_axons as f64,
            output_axons: cc.output_axons as f64 / c.max_output_axons as f64,
            synapses: cc.synapse_units as f64 / c.synapse_budget_units as f64,
        })
        .collect();
    LayerReport {
        id: id.to_string(),
        cores: agg.n_cores,
        grid: [grid.0, grid.1, grid.2],
        cost: neurofab::partition::evaluate_cost(tally, w, c),
        cost_terms: CostTerms {
            cores: w.alpha[0] * agg.n_cores as f64,
            synapses: w.alpha[1] * agg.n_syn as f64 / c.synapse_budget_units as f64,
            axons: w.alpha[2] * agg.n_axons as f64 / c.axon_budget() as f64,
            offchip: w.alpha[3] * agg.n_offchip as f64,
        },
        neurons: util_stat(per_core.iter().map(|u| u.neurons)),
        input_axons: util_stat(per_core.iter().map(|u| u.input_axons)),
        output_axons: util_stat(per_core.iter().map(|u| u.output_axons)),
        synapses: util_stat(per_core.iter().map(|u| u.synapses)),
        per_core,
    }
}

/// Assemble the compile report from the placed image. Tallies are recounted
/// from the image itself so off-chip charges are included.
pub fn build_report(
    net: &NetworkSpec,
    outcome: &OptimizeOutcome,
    image: &DeploymentImage,
    w: &CostWeights,
    constraints: &CoreConstraints,
) -> Result<CompileReport> {
    let tallies = recount(image)?;
    let phys = net.physical_layers();
    if tallies.len() != phys.len() {
        return Err(Error::Map("image layer count mismatch".into()));
    }
    let layers: Vec<LayerReport> = tallies
        .iter()
        .enumerate()
        .map(|(pos, tally)| {
            layer_report(
                &net.layers[phys[pos]].id,
                outcome.partitions[pos].grid(),
                tally,
                w,
                constraints,
            )
        })
        .collect();
    let total_cores: u64 = layers.iter().map(|l| l.cores).sum();
    let total_neurons: u64 = tallies.iter().map(|t| t.aggregate().n_neurons).sum();
    let total_cost: f64 = layers.iter().rev().map(|l| l.cost).sum();
    Ok(CompileReport {
        model: net.name.clone(),
        chips_used: image.chips.len() as u32,
        total_cores,
        total_neurons,
        mean_neuron_utilization: total_neurons as f64
            / (total_cores.max(1) * constraints.max_neurons_per_core) as f64,
        total_cost,
        layers,
    })
}
