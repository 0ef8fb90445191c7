//! Feeder fixtures shared by tests across the workspace.
//!
//! Every constant is a complete feeder text. `network` parses and builds one,
//! panicking on error, so tests read as one line per setup.

use mphase_core::model::PhasedNetwork;
use mphase_core::parser::{build, parse};

/// Single-phase two-bus feeder. Small enough to verify by hand.
pub const TWO_BUS: &str = "\
bus src phases=a kv_ln=7.2 source=true
bus end phases=a kv_ln=7.2
line trunk from=src to=end phases=a z=[0.3+0.6j] amps=400
load town bus=end phases=a kw=800 kvar=200
";

/// Three-phase four-bus feeder with full mutual coupling and unbalanced
/// wye loads. The workhorse fixture for solver comparisons.
pub const FOUR_BUS: &str = "\
bus f1 phases=abc kv_ln=7.2 source=true
bus f2 phases=abc kv_ln=7.2
bus f3 phases=abc kv_ln=7.2
bus f4 phases=abc kv_ln=7.2
line fl1 from=f1 to=f2 phases=abc amps=600 length_m=900 \\
  z=[0.4576+1.078j 0.156+0.5017j 0.1535+0.3849j | \\
     0.156+0.5017j 0.4666+1.0482j 0.158+0.4236j | \\
     0.1535+0.3849j 0.158+0.4236j 0.4615+1.0651j]
line fl2 from=f2 to=f3 phases=abc amps=600 length_m=700 \\
  z=[0.3432+0.8085j 0.117+0.3763j 0.1151+0.2887j | \\
     0.117+0.3763j 0.35+0.7861j 0.1185+0.3177j | \\
     0.1151+0.2887j 0.1185+0.3177j 0.3461+0.7988j]
line fl3 from=f3 to=f4 phases=abc amps=400 length_m=500 \\
  z=[0.2288+0.539j 0.078+0.2509j 0.0767+0.1925j | \\
     0.078+0.2509j 0.2333+0.5241j 0.079+0.2118j | \\
     0.0767+0.1925j 0.079+0.2118j 0.2307+0.5326j]
load ld2 bus=f2 phases=abc kw=[350 250 150] kvar=[120 80 50]
load ld3 bus=f3 phases=abc kw=[400 300 500] kvar=[150 100 180]
load ld4 bus=f4 phases=abc kw=[250 450 300] kvar=[90 160 110]
";

/// Step-down transformer feeding a low-voltage load.
pub const TRANSFORMER: &str = "\
bus t1 phases=abc kv_ln=7.2 source=true
bus t2 phases=abc kv_ln=7.2
bus t3 phases=abc kv_ln=2.4
line tl1 from=t1 to=t2 phases=abc amps=600 \\
  z=[0.2+0.5j 0.05+0.15j 0.05+0.15j | \\
     0.05+0.15j 0.2+0.5j 0.05+0.15j | \\
     0.05+0.15j 0.05+0.15j 0.2+0.5j]
transformer tx1 from=t2 to=t3 phases=abc kva=1500 z_pu=0.01+0.06j
load tld bus=t3 phases=abc kw=[300 280 260] kvar=[100 90 80]
";

/// Shunt capacitor bank compensating an inductive load.
pub const CAPACITOR: &str = "\
bus c1 phases=abc kv_ln=7.2 source=true
bus c2 phases=abc kv_ln=7.2
line cl1 from=c1 to=c2 phases=abc amps=400 \\
  z=[0.5+1j 0.1+0.3j 0.1+0.3j | \\
     0.1+0.3j 0.5+1j 0.1+0.3j | \\
     0.1+0.3j 0.1+0.3j 0.5+1j]
load cld bus=c2 phases=abc kw=[600 550 500] kvar=[300 280 260]
capacitor cb1 bus=c2 phases=abc kvar=[250 250 250] enabled=true
";

/// Voltage regulator boosting a loaded segment by five percent.
pub const REGULATOR: &str = "\
bus r1 phases=abc kv_ln=7.2 source=true
bus r2 phases=abc kv_ln=7.2
line rl1 from=r1 to=r2 phases=abc amps=400 \\
  z=[0.4+0.9j 0.08+0.25j 0.08+0.25j | \\
     0.08+0.25j 0.4+0.9j 0.08+0.25j | \\
     0.08+0.25j 0.08+0.25j 0.4+0.9j]
load rld bus=r2 phases=abc kw=[500 450 400] kvar=[200 150 120]
regulator reg1 segment=rl1 taps=1.05
";

/// Delta, constant-impedance, and constant-current loads plus a two-phase
/// lateral and a single-phase capacitor. Exercises every load path at once.
pub const MIXED_MODELS: &str = "\
bus m1 phases=abc kv_ln=7.2 source=true
bus m2 phases=abc kv_ln=7.2
bus m3 phases=ab kv_ln=7.2
line ml1 from=m1 to=m2 phases=abc amps=600 \\
  z=[0.3+0.7j 0.09+0.28j 0.09+0.28j | \\
     0.09+0.28j 0.3+0.7j 0.09+0.28j | \\
     0.09+0.28j 0.09+0.28j 0.3+0.7j]
line ml2 from=m2 to=m3 phases=ab amps=200 \\
  z=[0.6+1.1j 0.12+0.35j | 0.12+0.35j 0.6+1.1j]
load mld1 bus=m2 phases=abc conn=delta model=pq kw=[300 250 200] kvar=[100 80 60]
load mld2 bus=m2 phases=abc model=z kw=[150 150 150] kvar=[50 50 50]
load mld3 bus=m3 phases=ab model=i kw=[120 100] kvar=[40 30]
capacitor mcb bus=m2 phases=c kvar=[150] enabled=true
";

/// Six-bus chain with one three-phase DG unit at the fifth bus. The last
/// trunk segment is deliberately lossy so the best DG size sits strictly
/// inside the [0, 500] kW search interval.
pub const SIX_BUS_ONE_DG: &str = "\
bus g1 phases=abc kv_ln=7.2 source=true
bus g2 phases=abc kv_ln=7.2
bus g3 phases=abc kv_ln=7.2
bus g4 phases=abc kv_ln=7.2
bus g5 phases=abc kv_ln=7.2
bus g6 phases=abc kv_ln=7.2
line gl1 from=g1 to=g2 phases=abc amps=600 \\
  z=[0.05+0.12j 0.012+0.04j 0.012+0.04j | \\
     0.012+0.04j 0.05+0.12j 0.012+0.04j | \\
     0.012+0.04j 0.012+0.04j 0.05+0.12j]
line gl2 from=g2 to=g3 phases=abc amps=600 \\
  z=[0.05+0.12j 0.012+0.04j 0.012+0.04j | \\
     0.012+0.04j 0.05+0.12j 0.012+0.04j | \\
     0.012+0.04j 0.012+0.04j 0.05+0.12j]
line gl3 from=g3 to=g4 phases=abc amps=400 \\
  z=[0.08+0.18j 0.02+0.06j 0.02+0.06j | \\
     0.02+0.06j 0.08+0.18j 0.02+0.06j | \\
     0.02+0.06j 0.02+0.06j 0.08+0.18j]
line gl4 from=g4 to=g5 phases=abc amps=300 \\
  z=[2+3j 0.4+1j 0.4+1j | 0.4+1j 2+3j 0.4+1j | 0.4+1j 0.4+1j 2+3j]
line gl5 from=g5 to=g6 phases=abc amps=200 \\
  z=[0.3+0.6j 0.07+0.2j 0.07+0.2j | \\
     0.07+0.2j 0.3+0.6j 0.07+0.2j | \\
     0.07+0.2j 0.07+0.2j 0.3+0.6j]
load gld3 bus=g3 phases=abc kw=[300 260 220] kvar=[100 90 70]
load gld4 bus=g4 phases=abc kw=[260 240 200] kvar=[90 80 60]
load gld5 bus=g5 phases=abc kw=[80 70 60] kvar=[25 22 18]
load gld6 bus=g6 phases=abc kw=[60 50 40] kvar=[20 16 12]
dg gdg1 bus=g5 phases=abc p_min_kw=0 p_max_kw=500
";

/// Two DG units on one feeder: a three-phase unit on the trunk end and a
/// two-phase unit on an ab lateral.
pub const TWO_DG: &str = "\
bus d1 phases=abc kv_ln=7.2 source=true
bus d2 phases=abc kv_ln=7.2
bus d3 phases=abc kv_ln=7.2
bus d4 phases=abc kv_ln=7.2
bus d5 phases=ab kv_ln=7.2
line dl1 from=d1 to=d2 phases=abc amps=600 \\
  z=[0.15+0.35j 0.04+0.11j 0.04+0.11j | \\
     0.04+0.11j 0.15+0.35j 0.04+0.11j | \\
     0.04+0.11j 0.04+0.11j 0.15+0.35j]
line dl2 from=d2 to=d3 phases=abc amps=600 \\
  z=[0.25+0.55j 0.06+0.17j 0.06+0.17j | \\
     0.06+0.17j 0.25+0.55j 0.06+0.17j | \\
     0.06+0.17j 0.06+0.17j 0.25+0.55j]
line dl3 from=d3 to=d4 phases=abc amps=400 \\
  z=[1+1.8j 0.2+0.55j 0.2+0.55j | \\
     0.2+0.55j 1+1.8j 0.2+0.55j | \\
     0.2+0.55j 0.2+0.55j 1+1.8j]
line dl4 from=d3 to=d5 phases=ab amps=300 \\
  z=[1.5+2.2j 0.3+0.65j | 0.3+0.65j 1.5+2.2j]
load dld2 bus=d2 phases=abc kw=[250 220 200] kvar=[80 70 60]
load dld4 bus=d4 phases=abc kw=[350 320 300] kvar=[120 110 100]
load dld5 bus=d5 phases=ab kw=[160 140] kvar=[50 40]
dg ddg1 bus=d4 phases=abc p_min_kw=0 p_max_kw=1200
dg ddg2 bus=d5 phases=ab p_min_kw=0 p_max_kw=300
";

/// Ten megawatts behind an 89-ohm line: past the maximum power transfer
/// point, so the sweep cannot converge. Used to test failure paths.
pub const NONCONVERGENT: &str = "\
bus n1 phases=a kv_ln=7.2 source=true
bus n2 phases=a kv_ln=7.2
line nl1 from=n1 to=n2 phases=a z=[40+80j] amps=100
load nld bus=n2 phases=a kw=10000 kvar=3000
";

/// Parse and build a feeder text, panicking with a readable message.
pub fn network(text: &str) -> PhasedNetwork {
    let document = parse(text).unwrap_or_else(|e| panic!("fixture does not parse: {e}"));
    build(&document).unwrap_or_else(|e| panic!("fixture does not build: {e}"))
}

/// Every fixture that converges under default solver settings, by name.
pub fn converging() -> Vec<(&'static str, &'static str)> {
    vec![
        ("two_bus", TWO_BUS),
        ("four_bus", FOUR_BUS),
        ("transformer", TRANSFORMER),
        ("capacitor", CAPACITOR),
        ("regulator", REGULATOR),
        ("mixed_models", MIXED_MODELS),
        ("six_bus_one_dg", SIX_BUS_ONE_DG),
        ("two_dg", TWO_DG),
    ]
}
