//! Plain-text checkpoints.
//!
//! A checkpoint is a header line, metadata lines of the form `key value...`,
//! and named arrays:
//!
//! ```text
//! hedgelab-checkpoint 1
//! learner_steps 42
//! config_hash 9f2c...
//! feature_mode gamma_only
//! objective var 0.95
//! network actor sigmoid 3 64 64 1
//! array actor.0.weights 64 3
//! 0.125 -0.5 1e-3
//! ...
//! end
//! ```
//!
//! Values use the shortest decimal form that parses back to the same `f64`,
//! so writing and re-reading is bit-exact.

use std::fmt::Write as _;

use ndarray::{Array1, Array2};

use crate::agent::{Agent, Objective};
use crate::env::FeatureMode;
use crate::error::{HedgeError, Result};
use crate::neural::{Adam, Gradients, Layer, Mlp, NetworkSpec, OutputActivation};

const MAGIC: &str = "hedgelab-checkpoint";
const VERSION: u32 = 1;
/// Upper bound on declared array sizes, far above any network used here.
const MAX_ARRAY_LEN: usize = 1 << 24;

/// A matrix stored row-major; vectors have one column.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

/// Parsed checkpoint document: ordered metadata lines plus arrays.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: Vec<(String, Vec<String>)>,
    pub arrays: Vec<NamedArray>,
}

fn parse_err(line: usize, message: impl Into<String>) -> HedgeError {
    HedgeError::Parse {
        line,
        message: message.into(),
    }
}

fn format_err(message: impl Into<String>) -> HedgeError {
    HedgeError::Parse {
        line: 0,
        message: message.into(),
    }
}

fn valid_token(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(char::is_whitespace)
}

impl Checkpoint {
    pub fn push_meta(&mut self, key: &str, values: Vec<String>) {
        self.meta.push((key.to_string(), values));
    }

    /// First metadata line with `key`.
    pub fn meta_values(&self, key: &str) -> Option<&[String]> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_slice())
    }

    pub fn meta_value(&self, key: &str) -> Result<&str> {
        match self.meta_values(key) {
            Some([v]) => Ok(v),
            Some(v) => Err(format_err(format!("metadata {key}: expected 1 value, got {}", v.len()))),
            None => Err(format_err(format!("missing metadata {key}"))),
        }
    }

    pub fn array(&self, name: &str) -> Result<&NamedArray> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| format_err(format!("missing array {name}")))
    }

    pub fn to_text(&self) -> Result<String> {
        let mut out = format!("{MAGIC} {VERSION}\n");
        for (key, values) in &self.meta {
            if !valid_token(key) || key == "array" || key == "end" || values.iter().any(|v| !valid_token(v)) {
                return Err(HedgeError::InvalidInput(format!("metadata {key:?} is not writable")));
            }
            out.push_str(key);
            for v in values {
                out.push(' ');
                out.push_str(v);
            }
            out.push('\n');
        }
        for a in &self.arrays {
            if !valid_token(&a.name) {
                return Err(HedgeError::InvalidInput(format!("array name {:?} is not writable", a.name)));
            }
            if a.values.len() != a.rows * a.cols {
                return Err(HedgeError::ShapeMismatch {
                    what: format!("array {}", a.name),
                    expected: a.rows * a.cols,
                    got: a.values.len(),
                });
            }
            if let Some(v) = a.values.iter().find(|v| !v.is_finite()) {
                return Err(HedgeError::InvalidInput(format!("array {} holds non-finite value {v}", a.name)));
            }
            let _ = writeln!(out, "array {} {} {}", a.name, a.rows, a.cols);
            for r in 0..a.rows {
                let row = &a.values[r * a.cols..(r + 1) * a.cols];
                let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
        }
        out.push_str("end\n");
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let (n, header) = lines.next().ok_or_else(|| parse_err(1, "empty checkpoint"))?;
        let mut head = header.split_whitespace();
        if head.next() != Some(MAGIC) {
            return Err(parse_err(n, format!("expected header `{MAGIC}`")));
        }
        match head.next().map(str::parse::<u32>) {
            Some(Ok(VERSION)) => {}
            Some(Ok(v)) => return Err(parse_err(n, format!("unsupported version {v}"))),
            _ => return Err(parse_err(n, "missing or malformed version")),
        }
        if head.next().is_some() {
            return Err(parse_err(n, "trailing tokens after version"));
        }

        let mut doc = Checkpoint::default();
        let mut ended = false;
        while let Some((n, line)) = lines.next() {
            if line.is_empty() {
                continue;
            }
            if ended {
                return Err(parse_err(n, "content after `end`"));
            }
            let mut tokens = line.split_whitespace();
            let key = tokens.next().expect("non-empty line");
            match key {
                "end" => {
                    if tokens.next().is_some() {
                        return Err(parse_err(n, "trailing tokens after `end`"));
                    }
                    ended = true;
                }
                "array" => {
                    let name = tokens.next().ok_or_else(|| parse_err(n, "array without name"))?;
                    let mut dim = |what: &str| -> Result<usize> {
                        tokens
                            .next()
                            .ok_or_else(|| parse_err(n, format!("array {name}: missing {what}")))?
                            .parse::<usize>()
                            .map_err(|e| parse_err(n, format!("array {name}: bad {what}: {e}")))
                    };
                    let rows = dim("rows")?;
                    let cols = dim("cols")?;
                    if tokens.next().is_some() {
                        return Err(parse_err(n, format!("array {name}: trailing tokens")));
                    }
                    let len = rows
                        .checked_mul(cols)
                        .filter(|&l| l <= MAX_ARRAY_LEN)
                        .ok_or_else(|| parse_err(n, format!("array {name}: shape {rows}x{cols} too large")))?;
                    if doc.arrays.iter().any(|a| a.name == name) {
                        return Err(parse_err(n, format!("duplicate array {name}")));
                    }
                    let mut values = Vec::with_capacity(len.min(1 << 12));
                    for r in 0..rows {
                        let (rn, row) = lines
                            .next()
                            .ok_or_else(|| parse_err(n, format!("array {name}: missing row {r}")))?;
                        let before = values.len();
                        for tok in row.split_whitespace() {
                            let v: f64 = tok
                                .parse()
                                .map_err(|_| parse_err(rn, format!("array {name}: bad number {tok:?}")))?;
                            if !v.is_finite() {
                                return Err(parse_err(rn, format!("array {name}: non-finite value")));
                            }
                            values.push(v);
                        }
                        if values.len() - before != cols {
                            return Err(parse_err(
                                rn,
                                format!("array {name}: row {r} has {} values, expected {cols}", values.len() - before),
                            ));
                        }
                    }
                    doc.arrays.push(NamedArray {
                        name: name.to_string(),
                        rows,
                        cols,
                        values,
                    });
                }
                _ => doc.meta.push((key.to_string(), tokens.map(str::to_string).collect())),
            }
        }
        if !ended {
            return Err(parse_err(text.lines().count().max(1), "missing `end`"));
        }
        Ok(doc)
    }

    /// Full learner state, including target networks and optimizer moments.
    pub fn from_agent(agent: &Agent, config_hash: &str) -> Result<Self> {
        let mut doc = Checkpoint::default();
        doc.push_meta("learner_steps", vec![agent.learner_steps.to_string()]);
        doc.push_meta("config_hash", vec![config_hash.to_string()]);
        doc.push_meta("feature_mode", vec![agent.feature_mode.name().to_string()]);
        doc.push_meta("objective", objective_tokens(&agent.objective));
        for (key, v) in [
            ("initial_spot", agent.initial_spot),
            ("reward_scale", agent.reward_scale),
            ("huber_k", agent.huber_k),
            ("gamma_discount", agent.gamma_discount),
        ] {
            doc.push_meta(key, vec![format!("{v:?}")]);
        }
        for (name, net) in networks(agent) {
            let spec = net.spec();
            let mut values = vec![name.to_string(), spec.output.name().to_string()];
            values.extend(spec.widths.iter().map(usize::to_string));
            doc.push_meta("network", values);
        }
        for (name, opt) in [("actor_opt", &agent.actor_opt), ("critic_opt", &agent.critic_opt)] {
            doc.push_meta(
                "optimizer",
                vec![
                    name.to_string(),
                    format!("{:?}", opt.learning_rate),
                    format!("{:?}", opt.beta1),
                    format!("{:?}", opt.beta2),
                    format!("{:?}", opt.epsilon),
                    opt.steps.to_string(),
                ],
            );
        }
        for (name, net) in networks(agent) {
            push_layers(&mut doc, name, &net.layers);
        }
        for (name, opt) in [("actor_opt", &agent.actor_opt), ("critic_opt", &agent.critic_opt)] {
            push_layers(&mut doc, &format!("{name}.m"), &opt.first_moment);
            push_layers(&mut doc, &format!("{name}.v"), &opt.second_moment);
        }
        Ok(doc)
    }

    pub fn config_hash(&self) -> Result<&str> {
        self.meta_value("config_hash")
    }

    pub fn feature_mode(&self) -> Result<FeatureMode> {
        let name = self.meta_value("feature_mode")?;
        FeatureMode::from_name(name).ok_or_else(|| format_err(format!("unknown feature mode {name:?}")))
    }

    pub fn to_agent(&self) -> Result<Agent> {
        let learner_steps = parse_meta::<u64>(self, "learner_steps")?;
        let feature_mode = self.feature_mode()?;
        let objective = parse_objective(self.meta_values("objective").ok_or_else(|| format_err("missing objective"))?)?;
        objective.validate()?;
        let initial_spot = parse_meta::<f64>(self, "initial_spot")?;
        let reward_scale = parse_meta::<f64>(self, "reward_scale")?;
        let huber_k = parse_meta::<f64>(self, "huber_k")?;
        let gamma_discount = parse_meta::<f64>(self, "gamma_discount")?;

        let spec_of = |name: &str| -> Result<NetworkSpec> {
            let line = self
                .meta
                .iter()
                .find(|(k, v)| k == "network" && v.first().map(String::as_str) == Some(name))
                .ok_or_else(|| format_err(format!("missing network {name}")))?;
            let values = &line.1;
            let output = values
                .get(1)
                .and_then(|s| OutputActivation::from_name(s))
                .ok_or_else(|| format_err(format!("network {name}: bad output activation")))?;
            let widths = values[2..]
                .iter()
                .map(|w| w.parse::<usize>().map_err(|e| format_err(format!("network {name}: bad width: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            if widths.len() > 64 || widths.iter().any(|&w| w > 1 << 16) {
                return Err(format_err(format!("network {name}: implausible widths")));
            }
            NetworkSpec::new(widths, output)
        };
        let actor_spec = spec_of("actor")?;
        let critic_spec = spec_of("critic")?;
        if spec_of("target_actor")? != actor_spec || spec_of("target_critic")? != critic_spec {
            return Err(format_err("target network shapes differ from online networks"));
        }
        if actor_spec.input_width() != feature_mode.width() || actor_spec.output_width() != 1 {
            return Err(format_err(format!(
                "actor widths {:?} do not fit feature mode {}",
                actor_spec.widths,
                feature_mode.name()
            )));
        }
        if critic_spec.input_width() != feature_mode.width() + 1 {
            return Err(format_err(format!("critic widths {:?} do not fit feature mode", critic_spec.widths)));
        }

        let net = |name: &str, spec: &NetworkSpec| -> Result<Mlp> {
            Mlp::from_layers(spec.clone(), read_layers(self, name, spec)?)
        };
        let opt = |name: &str, spec: &NetworkSpec| -> Result<Adam> {
            let line = self
                .meta
                .iter()
                .find(|(k, v)| k == "optimizer" && v.first().map(String::as_str) == Some(name))
                .ok_or_else(|| format_err(format!("missing optimizer {name}")))?;
            let v = &line.1;
            if v.len() != 6 {
                return Err(format_err(format!("optimizer {name}: expected 5 values")));
            }
            let num = |i: usize| -> Result<f64> {
                finite(v[i].parse::<f64>().map_err(|e| format_err(format!("optimizer {name}: {e}")))?)
            };
            Ok(Adam {
                learning_rate: num(1)?,
                beta1: num(2)?,
                beta2: num(3)?,
                epsilon: num(4)?,
                steps: v[5].parse().map_err(|e| format_err(format!("optimizer {name}: {e}")))?,
                first_moment: read_layers(self, &format!("{name}.m"), spec)?,
                second_moment: read_layers(self, &format!("{name}.v"), spec)?,
            })
        };

        Ok(Agent {
            actor: net("actor", &actor_spec)?,
            critic: net("critic", &critic_spec)?,
            target_actor: net("target_actor", &actor_spec)?,
            target_critic: net("target_critic", &critic_spec)?,
            actor_opt: opt("actor_opt", &actor_spec)?,
            critic_opt: opt("critic_opt", &critic_spec)?,
            objective,
            feature_mode,
            initial_spot,
            reward_scale,
            huber_k,
            gamma_discount,
            learner_steps,
        })
    }
}

fn networks(agent: &Agent) -> [(&'static str, &Mlp); 4] {
    [
        ("actor", &agent.actor),
        ("critic", &agent.critic),
        ("target_actor", &agent.target_actor),
        ("target_critic", &agent.target_critic),
    ]
}

fn push_layers(doc: &mut Checkpoint, prefix: &str, layers: &Gradients) {
    for (i, layer) in layers.iter().enumerate() {
        let (rows, cols) = layer.weights.dim();
        doc.arrays.push(NamedArray {
            name: format!("{prefix}.{i}.weights"),
            rows,
            cols,
            values: layer.weights.iter().copied().collect(),
        });
        doc.arrays.push(NamedArray {
            name: format!("{prefix}.{i}.bias"),
            rows: layer.bias.len(),
            cols: 1,
            values: layer.bias.to_vec(),
        });
    }
}

fn read_layers(doc: &Checkpoint, prefix: &str, spec: &NetworkSpec) -> Result<Vec<Layer>> {
    (0..spec.layer_count())
        .map(|i| {
            let (fan_in, fan_out) = (spec.widths[i], spec.widths[i + 1]);
            let w = doc.array(&format!("{prefix}.{i}.weights"))?;
            let b = doc.array(&format!("{prefix}.{i}.bias"))?;
            if (w.rows, w.cols) != (fan_out, fan_in) || (b.rows, b.cols) != (fan_out, 1) {
                return Err(format_err(format!("{prefix} layer {i}: shape does not match network spec")));
            }
            let weights = Array2::from_shape_vec((fan_out, fan_in), w.values.clone())
                .map_err(|e| format_err(format!("{prefix} layer {i}: {e}")))?;
            Ok(Layer {
                weights,
                bias: Array1::from(b.values.clone()),
            })
        })
        .collect()
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format_err(format!("non-finite value {v}")))
    }
}

fn parse_meta<T: std::str::FromStr>(doc: &Checkpoint, key: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    doc.meta_value(key)?
        .parse::<T>()
        .map_err(|e| format_err(format!("metadata {key}: {e}")))
}

fn objective_tokens(obj: &Objective) -> Vec<String> {
    match *obj {
        Objective::MeanStd { c } => vec!["mean_std".into(), format!("{c:?}")],
        Objective::Var { level } => vec!["var".into(), format!("{level:?}")],
        Objective::Cvar { level } => vec!["cvar".into(), format!("{level:?}")],
    }
}

fn parse_objective(tokens: &[String]) -> Result<Objective> {
    let [kind, value] = tokens else {
        return Err(format_err("objective: expected kind and parameter"));
    };
    let x = finite(value.parse::<f64>().map_err(|e| format_err(format!("objective: {e}")))?)?;
    match kind.as_str() {
        "mean_std" => Ok(Objective::MeanStd { c: x }),
        "var" => Ok(Objective::Var { level: x }),
        "cvar" => Ok(Objective::Cvar { level: x }),
        other => Err(format_err(format!("unknown objective {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::AgentConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn agent() -> Agent {
        let config = AgentConfig {
            atoms: 7,
            hidden: vec![5, 4],
            objective: Objective::CVAR95,
            ..AgentConfig::default()
        };
        Agent::new(&config, FeatureMode::GammaVega, 10.0, &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
    }

    #[test]
    fn agent_round_trip_is_bit_exact() {
        let mut a = agent();
        a.learner_steps = 17;
        a.actor_opt.steps = 17;
        a.actor.layers[0].weights[[0, 0]] = 0.1 + 0.2;
        a.critic.layers[1].bias[2] = -1.0e-300;
        let text = Checkpoint::from_agent(&a, "abc123").unwrap().to_text().unwrap();
        let doc = Checkpoint::parse(&text).unwrap();
        assert_eq!(doc.config_hash().unwrap(), "abc123");
        let back = doc.to_agent().unwrap();
        assert_eq!(back, a);
        assert_eq!(doc.to_text().unwrap(), text);
    }

    #[test]
    fn rejects_malformed_documents() {
        let good = Checkpoint::from_agent(&agent(), "h").unwrap().to_text().unwrap();
        assert!(Checkpoint::parse("").is_err());
        assert!(Checkpoint::parse("something 1\nend\n").is_err());
        assert!(Checkpoint::parse("hedgelab-checkpoint 2\nend\n").is_err());
        assert!(Checkpoint::parse(&good.replace("end\n", "")).is_err());
        assert!(Checkpoint::parse("hedgelab-checkpoint 1\narray x 2 2\n1 2\n3\nend\n").is_err());
        assert!(Checkpoint::parse("hedgelab-checkpoint 1\narray x 1 1\nNaN\nend\n").is_err());
        assert!(Checkpoint::parse("hedgelab-checkpoint 1\narray x 99999999999 99999999999\nend\n").is_err());
        let err = Checkpoint::parse("hedgelab-checkpoint 1\narray x 1 2\n1 zz\nend\n").unwrap_err();
        assert!(matches!(err, HedgeError::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn feature_mode_mismatch_is_rejected() {
        let text = Checkpoint::from_agent(&agent(), "h").unwrap().to_text().unwrap();
        let doc = Checkpoint::parse(&text.replace("feature_mode gamma_vega", "feature_mode gamma_only")).unwrap();
        assert!(doc.to_agent().is_err());
    }

    #[test]
    fn missing_array_is_rejected() {
        let mut doc = Checkpoint::from_agent(&agent(), "h").unwrap();
        doc.arrays.retain(|a| a.name != "critic.1.bias");
        assert!(doc.to_agent().is_err());
    }
}
