//! End-to-end planning: enumerate configurations for every demanded model,
//! estimate (or load) their rates, then solve.

use crate::catalog::{Availability, CatalogBundle, GpuCatalog, ModelSpec};
use crate::configspace::{enumerate_configs, Configuration, PrunedFamily};
use crate::costmodel::{build_table, CommParams, MemoryParams, ThroughputTable};
use crate::error::{Error, Result};
use crate::solver::{self, Plan, SolverOptions};
use crate::workload::{DemandMatrix, WorkloadType};

#[derive(Debug, Clone)]
pub struct PlanningInputs {
    pub catalog: GpuCatalog,
    pub availability: Availability,
    pub budget: f64,
    /// Only the models that have demand.
    pub models: Vec<ModelSpec>,
    pub classes: Vec<WorkloadType>,
    pub demand: DemandMatrix,
    pub comm: CommParams,
    pub memory: MemoryParams,
    pub max_gpus_per_replica: u32,
    /// Measured rates laid over the analytic estimates.
    pub profile: Option<ThroughputTable>,
    /// Keep only configurations the profile covers and use its rates alone.
    pub profile_only: bool,
    pub options: SolverOptions,
}

/// Configurations and rates a solve chooses from.
#[derive(Debug, Clone, Default)]
pub struct Candidates {
    pub configs: Vec<Configuration>,
    pub table: ThroughputTable,
    pub pruned: Vec<PrunedFamily>,
}

impl PlanningInputs {
    pub fn new(bundle: &CatalogBundle, classes: Vec<WorkloadType>, demand: DemandMatrix) -> Result<Self> {
        if !demand.has_demand() {
            return Err(Error::Input("demand is empty".into()));
        }
        let models = demand
            .models()
            .iter()
            .map(|m| bundle.model(m).cloned())
            .collect::<Result<Vec<_>>>()?;
        let options = SolverOptions {
            model_memory: models.iter().map(|m| (m.name.clone(), m.min_replica_memory)).collect(),
            ..SolverOptions::default()
        };
        Ok(PlanningInputs {
            catalog: bundle.catalog.clone(),
            availability: bundle.availability.clone(),
            budget: bundle.budget.limit(),
            models,
            classes,
            demand,
            comm: CommParams::default(),
            memory: MemoryParams::default(),
            max_gpus_per_replica: 8,
            profile: None,
            profile_only: false,
            options,
        })
    }

    pub fn candidates(&self) -> Result<Candidates> {
        self.candidates_for(&self.availability)
    }

    /// Candidates under a different availability (replanning, baselines).
    pub fn candidates_for(&self, availability: &Availability) -> Result<Candidates> {
        let mut configs = Vec::new();
        let mut pruned = Vec::new();
        for model in &self.models {
            let e = enumerate_configs(&self.catalog, availability, model, self.max_gpus_per_replica)?;
            configs.extend(e.configs);
            pruned.extend(e.pruned);
        }
        let table = match (&self.profile, self.profile_only) {
            (Some(profile), true) => {
                let measured = profile.config_ids();
                configs.retain(|c| measured.binary_search(&c.id).is_ok());
                profile.clone()
            }
            (profile, _) => {
                let mut table = build_table(&configs, &self.classes, &self.models, &self.catalog, &self.comm, &self.memory)?;
                if let Some(p) = profile {
                    table.overlay(p);
                }
                table
            }
        };
        Ok(Candidates { configs, table, pruned })
    }

    pub fn solve_candidates(&self, cands: &Candidates, availability: &Availability, options: &SolverOptions) -> Result<Plan> {
        solver::solve(&cands.configs, &cands.table, &self.demand, self.budget, availability, options)
    }

    pub fn plan(&self) -> Result<(Plan, Candidates)> {
        let cands = self.candidates()?;
        let plan = self.solve_candidates(&cands, &self.availability, &self.options)?;
        Ok((plan, cands))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{default_catalog, Budget};
    use crate::costmodel::TableEntry;
    use crate::fixtures::{three_type_example, toy_catalog, toy_model, TOY_RATES};
    use crate::workload::default_classes;

    fn toy_inputs() -> PlanningInputs {
        let p = three_type_example();
        let bundle = CatalogBundle {
            catalog: toy_catalog(),
            availability: p.availability.clone(),
            budget: Budget::new(8.0).unwrap(),
            models: vec![toy_model("toy", 1)],
        };
        let mut inputs = PlanningInputs::new(&bundle, p.classes.clone(), p.demand.clone()).unwrap();
        let mut profile = ThroughputTable::default();
        for (id, w, rate) in TOY_RATES {
            profile.insert(id, w, TableEntry { rate, latency: None });
        }
        inputs.profile = Some(profile);
        inputs.profile_only = true;
        inputs
    }

    #[test]
    fn profile_only_pipeline_reproduces_the_worked_example() {
        let inputs = toy_inputs();
        let (plan, cands) = inputs.plan().unwrap();
        assert_eq!(cands.configs.len(), 4);
        assert!((plan.makespan - 28.6667).abs() < 1e-3);
    }

    #[test]
    fn unknown_model_in_demand_is_rejected() {
        let bundle = CatalogBundle {
            catalog: default_catalog(),
            availability: Availability::from_pairs([("H100", 4)]),
            budget: Budget::new(50.0).unwrap(),
            models: vec![ModelSpec::llama3_8b()],
        };
        let demand = DemandMatrix::single_model("mystery", &[(1, 10.0)]);
        let err = PlanningInputs::new(&bundle, default_classes(), demand).unwrap_err();
        assert!(err.to_string().contains("mystery"));
    }

    #[test]
    fn analytic_pipeline_on_a_small_catalog() {
        let bundle = CatalogBundle {
            catalog: default_catalog(),
            availability: Availability::from_pairs([("A6000", 2), ("L40", 2), ("H100", 2)]),
            budget: Budget::new(12.0).unwrap(),
            models: vec![ModelSpec::llama3_8b()],
        };
        let name = ModelSpec::llama3_8b().name;
        let demand = DemandMatrix::single_model(&name, &[(1, 50.0), (5, 30.0), (9, 20.0)]);
        let inputs = PlanningInputs::new(&bundle, default_classes(), demand).unwrap();
        let (plan, cands) = inputs.plan().unwrap();
        assert!(!cands.configs.is_empty());
        assert!(plan.total_cost <= 12.0 + 1e-9);
        let violations = solver::check_plan(
            &plan,
            &cands.configs,
            &cands.table,
            &inputs.demand,
            inputs.budget,
            &inputs.availability,
            1e-9,
        );
        assert!(violations.is_empty(), "{violations:?}");
    }
}
