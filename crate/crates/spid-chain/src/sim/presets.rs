use super::config::{DoubleSpendConfig, ScenarioConfig};

/// A named family of scenarios.
#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    /// `(label, config)`; labels are unique within the preset.
    pub scenarios: Vec<(String, ScenarioConfig)>,
}

const NAMES: [&str; 8] = [
    "fig2", "fig3", "fig4", "fig5", "fig6", "fig7-k2", "fig7-k4", "fig8",
];

pub fn preset_names() -> &'static [&'static str] {
    &NAMES
}

fn base(paper_scale: bool, k: usize) -> ScenarioConfig {
    if paper_scale {
        ScenarioConfig::new(10, 100, 1000, k)
    } else {
        ScenarioConfig::new(10, 20, 100, k)
    }
}

fn tag(x: f64) -> String {
    format!("{}", (x * 100.0).round() as u64)
}

/// Desk-scale presets (`n = 20`, `M = 100`) unless `paper_scale` asks for `n = 100`, `M = 1000`.
pub fn preset(name: &str, paper_scale: bool) -> Option<Preset> {
    let mut scenarios = Vec::new();
    let description = match name {
        "fig2" => {
            for lambda in [0.1, 0.3] {
                for coded in [true, false] {
                    for rate in [10.0, 20.0, 30.0, 40.0] {
                        let mut c = base(paper_scale, 2);
                        c.lambda = lambda;
                        c.coding_enabled = coded;
                        c.incoming_rate = Some(rate);
                        c.duration = 2.0;
                        let mode = if coded { "coded" } else { "uncoded" };
                        scenarios.push((format!("lambda{}-{mode}-rate{rate}", tag(lambda)), c));
                    }
                }
            }
            "intra-chain throughput against the incoming block rate"
        }
        "fig3" => {
            for chains in [5, 15] {
                for lambda in [0.1, 0.3] {
                    for coded in [true, false] {
                        let mut c = base(paper_scale, 2);
                        c.chains = chains;
                        c.lambda = lambda;
                        c.coding_enabled = coded;
                        c.incoming_rate = Some(40.0);
                        c.duration = 2.0;
                        let mode = if coded { "coded" } else { "uncoded" };
                        scenarios.push((format!("N{chains}-lambda{}-{mode}", tag(lambda)), c));
                    }
                }
            }
            "intra-chain throughput for small and large networks"
        }
        "fig4" => {
            for mu in [0.1, 0.55] {
                for gamma in [50.0, 100.0, 150.0, 200.0] {
                    let mut c = base(paper_scale, 2);
                    c.mu = mu;
                    c.gamma = gamma;
                    c.duration = 3.0;
                    scenarios.push((format!("mu{}-gamma{gamma}", tag(mu)), c));
                }
            }
            "inter-chain throughput against the network issuance rate"
        }
        "fig5" => {
            let sizes = if paper_scale { [100, 200] } else { [20, 40] };
            for n in sizes {
                for gamma in [100.0, 200.0] {
                    let mut c = base(paper_scale, 2);
                    c.workers = n;
                    c.mu = 0.1;
                    c.gamma = gamma;
                    c.duration = 3.0;
                    scenarios.push((format!("n{n}-gamma{gamma}"), c));
                }
            }
            "inter-chain throughput for two worker counts"
        }
        "fig6" => {
            for (k, mus) in [
                (2, [0.1, 0.3, 0.5, 0.55, 0.7]),
                (4, [0.1, 0.5, 0.75, 0.8, 0.9]),
            ] {
                for mu in mus {
                    let mut c = base(paper_scale, k);
                    c.mu = mu;
                    scenarios.push((format!("K{k}-mu{}", tag(mu)), c));
                }
            }
            "decentralization across tip counts and spamming rates"
        }
        "fig7-k2" | "fig7-k4" => {
            let (k, mus) = if name == "fig7-k2" {
                (2, [0.35, 0.55])
            } else {
                (4, [0.60, 0.80])
            };
            for mu in mus {
                let mut c = base(paper_scale, k);
                c.mu = mu;
                scenarios.push((format!("K{k}-mu{}", tag(mu)), c));
            }
            "tip pool growth and finality below and above the critical spamming rate"
        }
        "fig8" => {
            let (pairs, regular) = if paper_scale { (50, 300) } else { (10, 60) };
            for k in [2, 4] {
                let mut c = base(paper_scale, k);
                c.mu = 0.2;
                c.double_spend = Some(DoubleSpendConfig { pairs, regular });
                scenarios.push((format!("K{k}"), c));
            }
            "double-spend detection"
        }
        _ => return None,
    };
    let name = NAMES.iter().copied().find(|n| *n == name).expect("listed");
    Some(Preset {
        name,
        description,
        scenarios,
    })
}
