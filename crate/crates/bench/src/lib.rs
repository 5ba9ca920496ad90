//! Shared fixtures for the criterion benchmarks: deterministic instances at
//! the sizes the benches exercise, pre-reduced where a bench needs the
//! solver input rather than the pipeline front half.

use qkvdp::gen::{generate, GenConfig};
use qkvdp::graph::{disjoint_union, Instance, UnionModel};
use qkvdp::model::FlowModel;
use qkvdp::reduce::{fix_arcs, reduce_model, ReducedModel};

/// A generated instance together with its union model.
pub struct Fixture {
    pub instance: Instance,
    pub union: UnionModel,
}

pub fn fixture(m_v: usize, k: usize, seed: u64) -> Fixture {
    let instance = generate(&GenConfig::new(m_v, k, seed)).expect("benchmark instance");
    let union = disjoint_union(&instance.graph, &instance.pairs).expect("union model");
    Fixture { instance, union }
}

pub fn reduced(fx: &Fixture) -> ReducedModel {
    let fixed = fix_arcs(&fx.instance, &fx.union).expect("fixing pass");
    reduce_model(&fx.instance, &fx.union, &fixed).expect("reduced model")
}

pub fn flow_model(fx: &Fixture) -> FlowModel {
    FlowModel::from_reduced(&reduced(fx))
}
