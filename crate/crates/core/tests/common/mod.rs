#![allow(dead_code)]

use gridsched::bc::{BcOptions, MinlpProblem};
use gridsched::dsp::Dsp;
use gridsched::network::{
    Bus, CapacitorBank, ContinuousDevice, ControlMode, ControlVar, ControlVector, DeviceKind, ImpedanceLaw, Line,
    Network, TransformerBank, TransformerUnit, UpstreamThevenin, ZpLoad,
};
use gridsched::power_flow::{check_feasibility, solve_power_flow, Prices};
use gridsched::tra::{solve_nlp, FixedVars, NlpStatus, TraOptions};
use gridsched::Phasor;

pub fn unit(x: f64, taps: i32) -> TransformerUnit {
    TransformerUnit {
        capacity_mva: 3.0,
        x_series: x,
        r_series: 0.006,
        x_magnetizing: 390.0,
        r_core: 400.0,
        tap_min: -taps,
        tap_max: taps,
        delta_u: 0.01,
    }
}

pub fn der(name: &str, bus: usize, capacity: f64, price: f64) -> ContinuousDevice {
    ContinuousDevice {
        name: name.into(),
        kind: DeviceKind::Der,
        bus,
        capacity,
        price,
        mode: ControlMode::PowerControl,
        q_min_wind: None,
        alpha_max_pv: None,
        p_available: 0.0,
    }
}

pub fn svr(name: &str, bus: usize, capacity: f64) -> ContinuousDevice {
    ContinuousDevice {
        name: name.into(),
        kind: DeviceKind::Svr,
        bus,
        capacity,
        price: 0.0,
        mode: ControlMode::PowerControl,
        q_min_wind: None,
        alpha_max_pv: None,
        p_available: 0.0,
    }
}

pub fn load(bus: usize, p: f64, q: f64) -> ZpLoad {
    ZpLoad {
        bus,
        p_d0: p,
        q_d0: q,
        zeta_p: 0.55,
        zeta_q: 0.8,
        v0: 1.0,
    }
}

/// Radial feeder from `(from, to, r, x)` branches over buses `1..=n`.
pub fn feeder(n: usize, branches: &[(usize, usize, f64, f64)], units: Vec<TransformerUnit>) -> Network {
    Network {
        s_base_mva: 3.0,
        v_base_kv: 12.66,
        buses: (1..=n)
            .map(|id| Bus {
                id,
                v_min: 0.95,
                v_max: 1.05,
            })
            .collect(),
        lines: branches
            .iter()
            .map(|&(from, to, r, x)| Line {
                from,
                to,
                r,
                x,
                ampacity: None,
            })
            .collect(),
        transformers: TransformerBank {
            units,
            law: ImpedanceLaw::Linear,
        },
        interface_bus: 0,
        upstream: UpstreamThevenin {
            v_th: 1.0,
            z_th: Phasor::new(0.02, 0.1),
        },
        devices: vec![],
        capacitors: vec![],
        loads: vec![],
    }
}

/// Four buses: one tap changer (5 positions), a 4-step capacitor, a DER and
/// an SVR.
pub fn toy_a() -> Network {
    let mut net = feeder(4, &[(0, 1, 0.02, 0.015), (1, 2, 0.03, 0.02), (1, 3, 0.025, 0.03)], vec![unit(0.1, 2)]);
    net.devices = vec![der("der", 2, 0.3, 60.0), svr("svr", 3, 0.2)];
    net.capacitors = vec![CapacitorBank {
        bus: 3,
        step_admittance: 0.03,
        step_count_max: 4,
    }];
    net.loads = vec![load(2, 0.3, 0.12), load(3, 0.25, 0.15)];
    net
}

/// Five-bus chain behind two parallel tap changers (3 positions each) and
/// a 2-step capacitor.
pub fn toy_b() -> Network {
    let mut net = feeder(
        5,
        &[(0, 1, 0.02, 0.02), (1, 2, 0.03, 0.025), (2, 3, 0.03, 0.02), (3, 4, 0.04, 0.03)],
        vec![unit(0.1, 1), unit(0.11, 1)],
    );
    net.devices = vec![der("der", 3, 0.25, 55.0)];
    net.capacitors = vec![CapacitorBank {
        bus: 4,
        step_admittance: 0.05,
        step_count_max: 2,
    }];
    net.loads = vec![load(2, 0.15, 0.08), load(3, 0.2, 0.1), load(4, 0.2, 0.12)];
    net
}

/// Six buses, one tap changer, continuous devices only besides the taps.
pub fn toy_c() -> Network {
    let mut net = feeder(
        6,
        &[(0, 1, 0.015, 0.02), (1, 2, 0.03, 0.02), (2, 3, 0.03, 0.025), (1, 4, 0.02, 0.03), (4, 5, 0.035, 0.02)],
        vec![unit(0.09, 2)],
    );
    net.devices = vec![der("der", 3, 0.3, 45.0), svr("svr", 5, 0.25)];
    net.loads = vec![load(2, 0.12, 0.06), load(3, 0.18, 0.1), load(4, 0.1, 0.05), load(5, 0.22, 0.12)];
    net
}

/// Seven buses with two 3-step capacitors and a 3-position tap changer.
pub fn toy_d() -> Network {
    let mut net = feeder(
        7,
        &[
            (0, 1, 0.02, 0.02),
            (1, 2, 0.025, 0.02),
            (2, 3, 0.03, 0.02),
            (1, 4, 0.03, 0.025),
            (4, 5, 0.03, 0.02),
            (5, 6, 0.04, 0.03),
        ],
        vec![unit(0.1, 1)],
    );
    net.devices = vec![svr("svr", 6, 0.15)];
    net.capacitors = vec![
        CapacitorBank {
            bus: 3,
            step_admittance: 0.04,
            step_count_max: 3,
        },
        CapacitorBank {
            bus: 6,
            step_admittance: 0.04,
            step_count_max: 3,
        },
    ];
    net.loads = vec![
        load(2, 0.1, 0.06),
        load(3, 0.12, 0.08),
        load(4, 0.08, 0.05),
        load(5, 0.1, 0.07),
        load(6, 0.15, 0.1),
    ];
    net
}

/// Eight buses, a 5-position tap changer, a 4-step capacitor and a
/// dispatchable unit priced above the energy price.
pub fn toy_e() -> Network {
    let mut net = feeder(
        8,
        &[
            (0, 1, 0.015, 0.015),
            (1, 2, 0.02, 0.015),
            (2, 3, 0.025, 0.02),
            (3, 4, 0.03, 0.02),
            (2, 5, 0.03, 0.025),
            (5, 6, 0.03, 0.02),
            (6, 7, 0.035, 0.025),
        ],
        vec![unit(0.1, 2)],
    );
    net.devices = vec![der("der", 7, 0.2, 80.0), svr("svr", 4, 0.2)];
    net.capacitors = vec![CapacitorBank {
        bus: 7,
        step_admittance: 0.03,
        step_count_max: 4,
    }];
    net.loads = vec![
        load(2, 0.08, 0.04),
        load(3, 0.1, 0.05),
        load(4, 0.12, 0.07),
        load(5, 0.06, 0.03),
        load(6, 0.1, 0.06),
        load(7, 0.14, 0.08),
    ];
    net
}

pub fn toys() -> Vec<(&'static str, Network)> {
    vec![
        ("toy_a", toy_a()),
        ("toy_b", toy_b()),
        ("toy_c", toy_c()),
        ("toy_d", toy_d()),
        ("toy_e", toy_e()),
    ]
}

pub fn prices(rho_a: f64) -> Prices {
    Prices {
        active: rho_a,
        reactive: 0.1 * rho_a,
    }
}

pub fn problem(net: &Network, rho_a: f64) -> MinlpProblem<'_> {
    MinlpProblem {
        net,
        prices: prices(rho_a),
        tau: 1.0,
        anchor: net.zero_controls(),
    }
}

pub fn bc_options() -> BcOptions {
    BcOptions::default()
}

/// Every integer assignment of the problem's box.
pub fn lattice(net: &Network) -> Vec<Vec<(usize, f64)>> {
    let layout = net.control_layout();
    let ints: Vec<usize> = (0..layout.len()).filter(|&j| layout[j].is_integer()).collect();
    let mut points: Vec<Vec<(usize, f64)>> = vec![vec![]];
    for &j in &ints {
        let (lo, hi) = net.control_bounds(layout[j]);
        let mut next = Vec::new();
        for p in &points {
            let mut v = lo;
            while v <= hi + 1e-9 {
                let mut q = p.clone();
                q.push((j, v));
                next.push(q);
                v += 1.0;
            }
        }
        points = next;
    }
    points
}

/// Brute force: a trust-region solve of the continuous controls at every
/// integer assignment, keeping the best point that a fresh power flow
/// confirms feasible. Starts from the zero controls and from the middle of
/// the continuous box.
pub fn enumerate(net: &Network, prices: Prices, tau: f64) -> Option<(f64, Vec<f64>)> {
    let layout = net.control_layout();
    let opts = TraOptions::default();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for point in lattice(net) {
        let mut dsp = Dsp::new(net, prices, tau, net.zero_controls());
        let mut fixed = vec![None; layout.len()];
        for &(j, v) in &point {
            fixed[j] = Some(v);
        }
        let zero = dsp.flatten(&net.zero_controls());
        let mid: Vec<f64> = (0..layout.len()).map(|j| 0.5 * (dsp.lower[j] + dsp.upper[j])).collect();
        let unit = dsp.cost_unit();
        for start in [zero, mid] {
            let mut m = FixedVars::new(&mut dsp, fixed.clone());
            let y0 = m.restrict(&start);
            let Ok(sol) = solve_nlp(&mut m, &y0, &opts) else { continue };
            if sol.status == NlpStatus::Infeasible {
                continue;
            }
            let x = m.expand(&sol.x);
            let Some(cost) = verified_cost(net, &prices, tau, &x, 1e-6) else { continue };
            debug_assert!((cost / unit - sol.objective).abs() < 1e-6 * sol.objective.abs().max(1.0));
            if best.as_ref().is_none_or(|(b, _)| cost < *b) {
                best = Some((cost, x));
            }
        }
    }
    best
}

/// Cost of a flat control vector if a cold-start power flow finds every
/// constraint satisfied.
pub fn verified_cost(net: &Network, prices: &Prices, tau: f64, x: &[f64], tol: f64) -> Option<f64> {
    let c = net.unflatten(&net.zero_controls(), x);
    let op = solve_power_flow(net, &c, None).ok()?;
    if !check_feasibility(net, &op, tol).is_empty() {
        return None;
    }
    Some(gridsched::power_flow::evaluate_cost(net, &op, prices, tau))
}

pub fn with_load(net: &Network, m: f64) -> Network {
    let mut n = net.clone();
    for l in &mut n.loads {
        l.p_d0 *= m;
        l.q_d0 *= m;
    }
    n
}

pub fn controls_of(net: &Network, x: &[f64]) -> ControlVector {
    net.unflatten(&net.zero_controls(), x)
}

pub fn integer_values(net: &Network, x: &[f64]) -> Vec<f64> {
    net.control_layout()
        .iter()
        .zip(x)
        .filter(|(v, _)| matches!(v, ControlVar::Tap(_) | ControlVar::Step(_)))
        .map(|(_, x)| *x)
        .collect()
}
