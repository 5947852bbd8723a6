//! Plain-text scenario configuration: `[section]` headers followed by
//! `key = value [unit]` lines, `#` comments. Values are SI unless a unit
//! suffix is given.
//!
//! ```text
//! name = my-core
//!
//! [mesh]
//! length = 13 cm
//! diameter = 0.1016
//! elements = 100
//!
//! [fluids]
//! mu_w = 0.4 cP
//!
//! [stages.1]
//! name = secondary
//! duration = 68 h
//! u_in = 1.71e-7
//! ```

use std::collections::{BTreeMap, HashSet};
use std::f64::consts::PI;

use crate::biokinetics::{KineticParams, TrappingParams};
use crate::coupling::{CouplingConfig, InitialState, Stage, TimeConfig};
use crate::error::{Error, Result};
use crate::io::units::{parse_quantity, Dimension, QuantityError};
use crate::petrophysics::{BrooksCoreyParams, FluidProps, RelpermFamily};
use crate::scenarios::{MeshSpec, OutputPlan, ScenarioConfig};
use crate::transport::{DispersionParams, ExchangeMode};

/// Result of parsing: the resolved configuration and the keys that were
/// filled from defaults, as `section.key`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParsedConfig {
    pub config: ScenarioConfig,
    pub defaulted: Vec<String>,
}

type Get<T, V> = fn(&T) -> V;
type Set<T, V> = fn(&mut T, V);

enum Field<T> {
    Num(Dimension, Get<T, f64>, Set<T, f64>),
    Int(Get<T, usize>, Set<T, usize>),
    Bool(Get<T, bool>, Set<T, bool>),
    Text(
        Get<T, String>,
        fn(&mut T, &str) -> std::result::Result<(), String>,
    ),
    OptNum(Dimension, Get<T, Option<f64>>, Set<T, Option<f64>>),
    List(Dimension, Get<T, Vec<f64>>, Set<T, Vec<f64>>),
}

struct Key<T> {
    name: &'static str,
    field: Field<T>,
}

macro_rules! num {
    ($name:literal, $dim:ident, $($path:tt)+) => {
        Key { name: $name, field: Field::Num(Dimension::$dim, |c| c.$($path)+, |c, v| c.$($path)+ = v) }
    };
}

macro_rules! int {
    ($name:literal, $($path:tt)+) => {
        Key { name: $name, field: Field::Int(|c| c.$($path)+, |c, v| c.$($path)+ = v) }
    };
}

macro_rules! flag {
    ($name:literal, $($path:tt)+) => {
        Key { name: $name, field: Field::Bool(|c| c.$($path)+, |c, v| c.$($path)+ = v) }
    };
}

const SECTIONS: [&str; 10] = [
    "",
    "mesh",
    "fluids",
    "petro",
    "initial",
    "kinetics",
    "trapping",
    "dispersion",
    "numerics",
    "output",
];

fn config_keys(section: &str) -> Vec<Key<ScenarioConfig>> {
    match section {
        "" => vec![Key {
            name: "name",
            field: Field::Text(
                |c| c.name.clone(),
                |c, v| {
                    c.name = v.to_string();
                    Ok(())
                },
            ),
        }],
        "mesh" => vec![
            num!("length", Length, mesh.length),
            num!("area", Area, mesh.area),
            int!("elements", mesh.elements),
            flag!("vertical", mesh.vertical),
        ],
        "fluids" => vec![
            num!("mu_w", Viscosity, fluids.mu_w),
            num!("mu_o", Viscosity, fluids.mu_o),
            num!("rho_w", Density, fluids.rho_w),
            num!("rho_o", Density, fluids.rho_o),
            num!("gravity", Acceleration, fluids.gravity),
        ],
        "petro" => vec![
            num!("phi0", Dimensionless, phi0),
            num!("k0", Area, k0),
            Key {
                name: "relperm",
                field: Field::Text(
                    |c| c.rock.family.as_str().to_string(),
                    |c, v| {
                        c.rock.family = RelpermFamily::parse(v).map_err(|e| e.to_string())?;
                        Ok(())
                    },
                ),
            },
            num!("omega", Dimensionless, rock.omega),
            num!("entry_pressure", Pressure, rock.entry_pressure),
            num!("theta", Dimensionless, rock.theta),
            num!("s_wr", Dimensionless, rock.s_wr),
            num!("s_or", Dimensionless, rock.s_or),
            num!("k_rw0", Dimensionless, rock.k_rw0),
            num!("k_ro0", Dimensionless, rock.k_ro0),
            num!("n_w", Dimensionless, rock.n_w),
            num!("n_o", Dimensionless, rock.n_o),
            flag!("capillarity", rock.capillarity),
        ],
        "initial" => vec![
            num!("p_o", Pressure, initial.p_o),
            num!("s_w", Dimensionless, initial.s_w),
            num!("c_m", Concentration, initial.c[0]),
            num!("c_n", Concentration, initial.c[1]),
            num!("c_surf", Concentration, initial.c[2]),
            num!("sigma_r", Dimensionless, initial.sigma_r),
            num!("sigma_i", Dimensionless, initial.sigma_i),
        ],
        "trapping" => vec![
            num!("theta_ow", Angle, trapping.theta_ow),
            num!("c_crit", Concentration, trapping.c_crit),
            num!("s_or_low", Dimensionless, trapping.s_or_low),
            num!("s_or_high", Dimensionless, trapping.s_or_high),
            num!("n_to_low", Dimensionless, trapping.n_to_low),
            num!("n_to_high", Dimensionless, trapping.n_to_high),
            num!("k_ro0_low", Dimensionless, trapping.k_ro0_low),
            num!("k_ro0_high", Dimensionless, trapping.k_ro0_high),
            num!("n_o_low", Dimensionless, trapping.n_o_low),
            num!("n_o_high", Dimensionless, trapping.n_o_high),
            flag!("include_bond", trapping.include_bond),
            num!("flow_angle", Angle, trapping.flow_angle),
        ],
        "dispersion" => vec![
            num!("alpha_l_m", Length, dispersion.alpha_l[0]),
            num!("alpha_l_n", Length, dispersion.alpha_l[1]),
            num!("alpha_l_surf", Length, dispersion.alpha_l[2]),
            num!("alpha_t_m", Length, dispersion.alpha_t[0]),
            num!("alpha_t_n", Length, dispersion.alpha_t[1]),
            num!("alpha_t_surf", Length, dispersion.alpha_t[2]),
            num!("d_m_m", Diffusivity, dispersion.d_m[0]),
            num!("d_m_n", Diffusivity, dispersion.d_m[1]),
            num!("d_m_surf", Diffusivity, dispersion.d_m[2]),
            num!("tortuosity", Dimensionless, dispersion.tortuosity),
        ],
        "numerics" => vec![
            num!("epsilon", Diffusivity, epsilon),
            Key {
                name: "exchange",
                field: Field::Text(
                    |c| c.exchange.as_str().to_string(),
                    |c, v| {
                        c.exchange = ExchangeMode::parse(v).map_err(|e| e.to_string())?;
                        Ok(())
                    },
                ),
            },
            num!("negativity_tolerance", Dimensionless, negativity_tolerance),
            num!("dt_initial", Time, time.dt_initial),
            num!("dt_min", Time, time.dt_min),
            num!("dt_max", Time, time.dt_max),
            num!("growth", Dimensionless, time.growth),
            int!("max_rejections", time.max_rejections),
            int!("bdf_order", time.bdf_order),
            num!("flow_rtol", Dimensionless, time.flow_newton.rtol),
            num!("flow_atol", Rate, time.flow_newton.atol),
            int!("flow_max_iterations", time.flow_newton.max_iterations),
            num!("transport_rtol", Dimensionless, time.transport_newton.rtol),
            num!("transport_atol", Dimensionless, time.transport_newton.atol),
            int!(
                "transport_max_iterations",
                time.transport_newton.max_iterations
            ),
            num!("outer_tolerance", Dimensionless, coupling.tolerance),
            int!("max_outer", coupling.max_outer),
            flag!("clogging", coupling.clogging),
            flag!("surfactant", coupling.surfactant),
        ],
        "output" => vec![
            Key {
                name: "profile_times",
                field: Field::List(
                    Dimension::Time,
                    |c| c.output.profile_times.clone(),
                    |c, v| c.output.profile_times = v,
                ),
            },
            flag!("plot_script", output.plot_script),
        ],
        _ => Vec::new(),
    }
}

fn kinetic_keys() -> Vec<Key<KineticParams>> {
    vec![
        num!("g_max", Rate, g_max),
        num!("k_mn", Concentration, k_mn),
        num!("d_m", Rate, d_m),
        num!("k_c1", Rate, k_c1),
        num!("k_c2", Rate, k_c2),
        num!("k_d", Rate, k_d),
        num!("m_n", Rate, m_n),
        num!("y_mn", Dimensionless, y_mn),
        num!("y_surf_m", Dimensionless, y_surf_m),
        num!("y_surf_n", Dimensionless, y_surf_n),
        num!("mu_surf_max", Rate, mu_surf_max),
        num!("k_surf_n", Concentration, k_surf_n),
        num!("c_n_crit", Concentration, c_n_crit),
        num!("rho_m", Density, rho_m),
    ]
}

fn stage_keys() -> Vec<Key<Stage>> {
    vec![
        Key {
            name: "name",
            field: Field::Text(
                |s| s.name.clone(),
                |s, v| {
                    s.name = v.to_string();
                    Ok(())
                },
            ),
        },
        num!("duration", Time, duration),
        num!("u_in", Velocity, u_in),
        Key {
            name: "s_w_in",
            field: Field::OptNum(Dimension::Dimensionless, |s| s.s_w_in, |s, v| s.s_w_in = v),
        },
        num!("p_out", Pressure, p_out),
        num!("c_m_in", Concentration, c_in[0]),
        num!("c_n_in", Concentration, c_in[1]),
        num!("c_surf_in", Concentration, c_in[2]),
    ]
}

/// Values used for every key a configuration leaves out.
pub fn default_config() -> ScenarioConfig {
    let rock = BrooksCoreyParams::default();
    ScenarioConfig {
        name: "unnamed".into(),
        mesh: MeshSpec {
            length: 1.0,
            area: 1.0,
            elements: 100,
            vertical: false,
        },
        fluids: FluidProps {
            mu_w: 1e-3,
            mu_o: 1e-2,
            rho_w: 1000.0,
            rho_o: 850.0,
            gravity: 9.81,
        },
        rock,
        phi0: 0.2,
        k0: 1e-13,
        epsilon: 1e-7,
        kinetics: None,
        dispersion: DispersionParams::default(),
        exchange: ExchangeMode::default(),
        negativity_tolerance: 1e-3,
        trapping: TrappingParams::default(),
        initial: InitialState {
            p_o: 1e5,
            s_w: rock.s_wr,
            c: [0.0; 3],
            sigma_r: 0.0,
            sigma_i: 0.0,
        },
        stages: Vec::new(),
        time: TimeConfig::default(),
        coupling: CouplingConfig::default(),
        output: OutputPlan::default(),
    }
}

fn default_stage(index: usize, p_out: f64) -> Stage {
    Stage {
        name: format!("stage{index}"),
        duration: 0.0,
        u_in: 0.0,
        s_w_in: None,
        p_out,
        c_in: [0.0; 3],
    }
}

fn perr(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column,
        message: message.into(),
    }
}

/// One `key = value` line, positions 1-based.
struct Entry<'a> {
    line: usize,
    key: &'a str,
    key_col: usize,
    value: &'a str,
    value_col: usize,
}

#[derive(Default)]
struct Section<'a> {
    entries: Vec<Entry<'a>>,
    header_line: usize,
}

fn column_of(line: &str, sub: &str) -> usize {
    let offset = sub.as_ptr() as usize - line.as_ptr() as usize;
    line[..offset].chars().count() + 1
}

fn split_sections(
    text: &str,
) -> Result<(BTreeMap<String, Section<'_>>, BTreeMap<usize, Section<'_>>)> {
    let mut sections: BTreeMap<String, Section> = BTreeMap::new();
    let mut stages: BTreeMap<usize, Section> = BTreeMap::new();
    sections.insert(String::new(), Section::default());
    enum Cur {
        Plain(String),
        Stage(usize),
    }
    let mut cur = Cur::Plain(String::new());
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let content = raw.split('#').next().unwrap_or("");
        let trimmed = content.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| perr(ln, column_of(raw, trimmed) + trimmed.len(), "expected `]`"))?
                .trim();
            let col = column_of(raw, trimmed) + 1;
            if !seen.insert(name.to_string()) {
                return Err(perr(ln, col, format!("section [{name}] appears twice")));
            }
            if let Some(n) = name.strip_prefix("stages.") {
                let idx: usize = n.parse().ok().filter(|&v| v >= 1).ok_or_else(|| {
                    perr(
                        ln,
                        col,
                        format!("stage index must be a positive integer, got `{n}`"),
                    )
                })?;
                stages.insert(
                    idx,
                    Section {
                        entries: Vec::new(),
                        header_line: ln,
                    },
                );
                cur = Cur::Stage(idx);
            } else if SECTIONS.contains(&name) && !name.is_empty() {
                sections.insert(
                    name.to_string(),
                    Section {
                        entries: Vec::new(),
                        header_line: ln,
                    },
                );
                cur = Cur::Plain(name.to_string());
            } else {
                return Err(perr(ln, col, format!("unknown section [{name}]")));
            }
            continue;
        }
        let eq = content
            .find('=')
            .ok_or_else(|| perr(ln, column_of(raw, trimmed), "expected `key = value`"))?;
        let key = content[..eq].trim();
        if key.is_empty() {
            return Err(perr(ln, eq + 1, "missing key before `=`"));
        }
        let value = content[eq + 1..].trim();
        let value_col = if value.is_empty() {
            content[..eq].chars().count() + 2
        } else {
            column_of(raw, value)
        };
        let entry = Entry {
            line: ln,
            key,
            key_col: column_of(raw, key),
            value,
            value_col,
        };
        let section = match &cur {
            Cur::Plain(s) => sections.get_mut(s),
            Cur::Stage(i) => stages.get_mut(i),
        }
        .expect("current section exists");
        if let Some(prev) = section.entries.iter().find(|e| e.key == key) {
            return Err(perr(
                ln,
                entry.key_col,
                format!("key `{key}` already set on line {}", prev.line),
            ));
        }
        section.entries.push(entry);
    }
    Ok((sections, stages))
}

fn quantity(e: &Entry, qualified: &str, dim: Dimension) -> Result<f64> {
    quantity_text(e.value, e.line, e.value_col, qualified, dim)
}

fn quantity_text(
    text: &str,
    line: usize,
    col: usize,
    qualified: &str,
    dim: Dimension,
) -> Result<f64> {
    parse_quantity(text, dim).map_err(|err| match err {
        QuantityError::Number(offset) => perr(
            line,
            col + offset,
            format!("`{qualified}`: expected a number"),
        ),
        QuantityError::WrongDimension { unit, found } => Error::Units {
            key: qualified.to_string(),
            message: format!(
                "`{unit}` is a unit of {found}, expected {dim} ({})",
                dim.si_unit()
            ),
        },
        QuantityError::UnknownUnit(unit) => Error::Units {
            key: qualified.to_string(),
            message: format!(
                "unknown unit `{unit}`; {dim} accepts {}",
                dim.units()
                    .iter()
                    .map(|(u, _)| if u.is_empty() { "no suffix" } else { u })
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
        },
    })
}

fn apply<T>(target: &mut T, keys: &[Key<T>], e: &Entry, qualified: &str) -> Result<()> {
    let key = keys
        .iter()
        .find(|k| k.name == e.key)
        .ok_or_else(|| perr(e.line, e.key_col, format!("unknown key `{qualified}`")))?;
    match &key.field {
        Field::Num(dim, _, set) => set(target, quantity(e, qualified, *dim)?),
        Field::Int(_, set) => {
            let v = e.value.parse().map_err(|_| {
                perr(
                    e.line,
                    e.value_col,
                    format!("`{qualified}`: expected a non-negative integer"),
                )
            })?;
            set(target, v)
        }
        Field::Bool(_, set) => {
            let v = match e.value {
                "true" | "yes" | "on" => true,
                "false" | "no" | "off" => false,
                _ => {
                    return Err(perr(
                        e.line,
                        e.value_col,
                        format!("`{qualified}`: expected true or false"),
                    ))
                }
            };
            set(target, v)
        }
        Field::Text(_, set) => {
            if e.value.is_empty() {
                return Err(perr(
                    e.line,
                    e.value_col,
                    format!("`{qualified}`: empty value"),
                ));
            }
            set(target, e.value).map_err(|m| perr(e.line, e.value_col, m))?
        }
        Field::OptNum(dim, _, set) => {
            let v = if e.value == "none" {
                None
            } else {
                Some(quantity(e, qualified, *dim)?)
            };
            set(target, v)
        }
        Field::List(dim, _, set) => {
            let mut out = Vec::new();
            if !e.value.is_empty() {
                for item in e.value.split(',') {
                    let col = e.value_col
                        + e.value[..item.as_ptr() as usize - e.value.as_ptr() as usize]
                            .chars()
                            .count();
                    out.push(quantity_text(item, e.line, col, qualified, *dim)?);
                }
            }
            set(target, out)
        }
    }
    Ok(())
}

fn qualify(section: &str, key: &str) -> String {
    if section.is_empty() {
        key.to_string()
    } else {
        format!("{section}.{key}")
    }
}

/// Parses configuration text, filling omitted keys from
/// [`default_config`], and validates the result.
pub fn parse_config(text: &str) -> Result<ParsedConfig> {
    let (sections, stage_sections) = split_sections(text)?;
    let mut config = default_config();
    let mut defaulted = Vec::new();

    for name in SECTIONS {
        if name == "kinetics" {
            continue;
        }
        let keys = config_keys(name);
        let section = sections.get(name);
        let mut set = HashSet::new();
        for e in section.map(|s| s.entries.as_slice()).unwrap_or_default() {
            let q = qualify(name, e.key);
            if name == "mesh" && e.key == "diameter" {
                if section.is_some_and(|s| s.entries.iter().any(|o| o.key == "area")) {
                    return Err(perr(
                        e.line,
                        e.key_col,
                        "give either `mesh.area` or `mesh.diameter`, not both",
                    ));
                }
                let d = quantity(e, &q, Dimension::Length)?;
                config.mesh.area = PI * d * d / 4.0;
                set.insert("area");
                continue;
            }
            apply(&mut config, &keys, e, &q)?;
            set.insert(e.key);
        }
        for k in &keys {
            if !set.contains(k.name) {
                defaulted.push(qualify(name, k.name));
            }
        }
    }
    // The initial saturation follows the residual water unless given.
    if defaulted.iter().any(|k| k == "initial.s_w") {
        config.initial.s_w = config.rock.s_wr;
    }

    if let Some(section) = sections.get("kinetics").filter(|s| !s.entries.is_empty()) {
        let keys = kinetic_keys();
        let mut k = KineticParams::default();
        for e in &section.entries {
            apply(&mut k, &keys, e, &qualify("kinetics", e.key))?;
        }
        for key in &keys {
            if !section.entries.iter().any(|e| e.key == key.name) {
                defaulted.push(qualify("kinetics", key.name));
            }
        }
        config.kinetics = Some(k);
    } else if let Some(section) = sections.get("kinetics") {
        log::debug!(
            "[kinetics] on line {} is empty; transport disabled",
            section.header_line
        );
    }

    let keys = stage_keys();
    for (pos, (idx, section)) in stage_sections.iter().enumerate() {
        if *idx != pos + 1 {
            return Err(perr(
                section.header_line,
                1,
                format!("stages must be numbered 1, 2, ...; found [stages.{idx}]"),
            ));
        }
        let mut stage = default_stage(*idx, config.initial.p_o);
        let prefix = format!("stages.{idx}");
        for e in &section.entries {
            apply(&mut stage, &keys, e, &qualify(&prefix, e.key))?;
        }
        for key in &keys {
            if !section.entries.iter().any(|e| e.key == key.name) {
                defaulted.push(qualify(&prefix, key.name));
            }
        }
        config.stages.push(stage);
    }

    config.validate()?;
    Ok(ParsedConfig { config, defaulted })
}

/// Shortest text that parses back to the same `f64`.
pub fn format_number(v: f64) -> String {
    format!("{v:e}")
}

fn render<T>(target: &T, field: &Field<T>) -> String {
    match field {
        Field::Num(_, get, _) => format_number(get(target)),
        Field::Int(get, _) => get(target).to_string(),
        Field::Bool(get, _) => get(target).to_string(),
        Field::Text(get, _) => get(target),
        Field::OptNum(_, get, _) => get(target).map_or_else(|| "none".to_string(), format_number),
        Field::List(_, get, _) => get(target)
            .iter()
            .map(|v| format_number(*v))
            .collect::<Vec<_>>()
            .join(", "),
    }
}

fn unit_comment<T>(field: &Field<T>) -> &'static str {
    match field {
        Field::Num(d, ..) | Field::OptNum(d, ..) | Field::List(d, ..) => d.si_unit(),
        _ => "",
    }
}

/// Every resolved key with its value, in export order.
pub fn resolved_parameters(config: &ScenarioConfig) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for name in SECTIONS {
        if name == "kinetics" {
            if let Some(k) = &config.kinetics {
                for key in kinetic_keys() {
                    out.push((qualify(name, key.name), render(k, &key.field)));
                }
            }
            continue;
        }
        for key in config_keys(name) {
            out.push((qualify(name, key.name), render(config, &key.field)));
        }
    }
    for (i, stage) in config.stages.iter().enumerate() {
        for key in stage_keys() {
            out.push((
                qualify(&format!("stages.{}", i + 1), key.name),
                render(stage, &key.field),
            ));
        }
    }
    out
}

fn write_section<T>(out: &mut String, header: Option<&str>, target: &T, keys: &[Key<T>]) {
    if let Some(h) = header {
        out.push_str(&format!("\n[{h}]\n"));
    }
    for key in keys {
        let value = render(target, &key.field);
        let unit = unit_comment(&key.field);
        let line = format!("{} = {}", key.name, value);
        if unit.is_empty() {
            out.push_str(&line);
        } else {
            out.push_str(&format!("{line:<40} # {unit}"));
        }
        out.push('\n');
    }
}

/// Writes a configuration in SI units; `parse_config` reads it back to an
/// equal value.
pub fn export_config(config: &ScenarioConfig) -> String {
    let mut out =
        String::from("# Scenario configuration. Values are SI unless a unit suffix is given.\n");
    for name in SECTIONS {
        if name == "kinetics" {
            if let Some(k) = &config.kinetics {
                write_section(&mut out, Some(name), k, &kinetic_keys());
            }
            continue;
        }
        let header = (!name.is_empty()).then_some(name);
        write_section(&mut out, header, config, &config_keys(name));
    }
    for (i, stage) in config.stages.iter().enumerate() {
        write_section(
            &mut out,
            Some(&format!("stages.{}", i + 1)),
            stage,
            &stage_keys(),
        );
    }
    out
}
