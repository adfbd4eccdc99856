//! Ready-made experiment configurations.

use super::config::{
    ControllerConfig, CostConfig, ExcitationConfig, ExperimentConfig, LtiSettings, NlSettings,
    NoiseConfig, PlantConfig, SetpointChange, SolverConfig,
};
use crate::controller::BoxSet;
use crate::plant::{FourTankParams, NoiseModel};

const NAMES: &[&str] = &[
    "fourtank_eq6",
    "fourtank_frozen",
    "fourtank_two_setpoints",
    "lti_nominal",
    "lti_robust",
];

pub fn builtin_names() -> &'static [&'static str] {
    NAMES
}

pub fn builtin_config(name: &str) -> Option<ExperimentConfig> {
    Some(match name {
        "fourtank_eq6" => fourtank_eq6(),
        "fourtank_frozen" => {
            let mut c = fourtank_eq6();
            c.name = name.into();
            if let ControllerConfig::Nonlinear(s) = &mut c.controller {
                s.update_data = false;
            }
            c
        }
        "fourtank_two_setpoints" => {
            let mut c = fourtank_eq6();
            c.name = name.into();
            c.t_end = 1201;
            c.schedule.push(SetpointChange {
                start: 601,
                y: vec![11.0, 11.0],
                u: None,
            });
            c.cost.t_end = 1200;
            c
        }
        "lti_nominal" => lti(false),
        "lti_robust" => lti(true),
        _ => return None,
    })
}

/// Four-tank benchmark with the standard tuning: `N = 150`, `L = 35`,
/// `n = 3`, `Q = I`, `R = 2I`, `S = 20I`, `lambda_alpha = 5e-5`,
/// `lambda_sigma = 2e5`, `U = [0, 60]^2`, `U_s = [0.6, 59.4]^2`.
fn fourtank_eq6() -> ExperimentConfig {
    ExperimentConfig {
        name: "fourtank_eq6".into(),
        t_end: 501,
        seed: 0,
        plant: PlantConfig::FourTank {
            params: FourTankParams::default(),
            perturbation: None,
            substeps: 1,
            x0: [0.0; 4],
        },
        controller: ControllerConfig::Nonlinear(NlSettings {
            horizon: 35,
            order: 3,
            q: vec![1.0, 1.0],
            r: vec![2.0, 2.0],
            s: vec![20.0, 20.0],
            lambda_alpha: 5e-5,
            lambda_sigma: 2e5,
            input_box: BoxSet::uniform(2, 0.0, 60.0),
            setpoint_box: BoxSet::uniform(2, 0.6, 59.4),
            update_data: true,
        }),
        excitation: ExcitationConfig {
            lower: vec![20.0, 20.0],
            upper: vec![30.0, 30.0],
            steps: 150,
        },
        schedule: vec![SetpointChange {
            start: 0,
            y: vec![15.0, 15.0],
            u: None,
        }],
        noise: NoiseConfig::default(),
        cost: CostConfig {
            s: vec![20.0, 20.0],
            t_start: 150,
            t_end: 500,
        },
        solver: SolverConfig::default(),
    }
}

/// Stable second-order SISO plant with a complex pole pair.
fn lti(robust: bool) -> ExperimentConfig {
    let settings = LtiSettings {
        horizon: 10,
        order: 2,
        q: vec![1.0],
        r: vec![0.1],
        input_box: BoxSet::uniform(1, -5.0, 5.0),
        output_box: None,
        lambda_alpha: 1e-1,
        lambda_sigma: 1e3,
        eps_bar: if robust { 0.01 } else { 0.0 },
    };
    ExperimentConfig {
        name: if robust { "lti_robust" } else { "lti_nominal" }.into(),
        t_end: 160,
        seed: 0,
        plant: PlantConfig::Lti {
            a: vec![vec![0.7, 0.2], vec![-0.1, 0.8]],
            b: vec![vec![1.0], vec![0.5]],
            c: vec![vec![1.0, 0.0]],
            d: None,
            x0: None,
        },
        controller: if robust {
            ControllerConfig::Robust(settings)
        } else {
            ControllerConfig::Nominal(settings)
        },
        excitation: ExcitationConfig {
            lower: vec![-1.0],
            upper: vec![1.0],
            steps: 60,
        },
        schedule: vec![SetpointChange {
            start: 0,
            y: vec![1.0],
            u: None,
        }],
        noise: NoiseConfig {
            model: if robust {
                NoiseModel::UniformInf { eps_bar: 0.01 }
            } else {
                NoiseModel::None
            },
            seed: 1,
        },
        cost: CostConfig {
            s: vec![1.0],
            t_start: 60,
            t_end: 159,
        },
        solver: SolverConfig::default(),
    }
}
