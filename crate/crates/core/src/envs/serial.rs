//! MDP JSON document with a fixed field order and fixed real formatting.
//!
//! The document is `{"S":..,"A":..,"H":..,"P":[[[..]]],"R":[[..]],"phi":..,"x1":[..]}`
//! in exactly that key order. Reals are written with 17 significant digits
//! (`{:.16e}`), which round-trips every finite f64 bit-exactly.

use serde_json::Value;

use super::mdp::{LinearMdp, TabularMdp};
use crate::error::{Error, Result};

/// 17-significant-digit decimal form of a real; the canonical wire format for
/// every floating-point number this crate emits.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_nested(out: &mut String, v: &NestedReal) {
    match v {
        NestedReal::Leaf(x) => out.push_str(&fmt_real(*x)),
        NestedReal::List(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_nested(out, item);
            }
            out.push(']');
        }
    }
}

enum NestedReal {
    Leaf(f64),
    List(Vec<NestedReal>),
}

fn vec1(v: &[f64]) -> NestedReal {
    NestedReal::List(v.iter().map(|&x| NestedReal::Leaf(x)).collect())
}

fn vec2(v: &[Vec<f64>]) -> NestedReal {
    NestedReal::List(v.iter().map(|x| vec1(x)).collect())
}

fn vec3(v: &[Vec<Vec<f64>>]) -> NestedReal {
    NestedReal::List(v.iter().map(|x| vec2(x)).collect())
}

fn vec4(v: &[Vec<Vec<Vec<f64>>>]) -> NestedReal {
    NestedReal::List(v.iter().map(|x| vec3(x)).collect())
}

fn mdp_to_json(mdp: &TabularMdp, phi: Option<&Vec<Vec<Vec<f64>>>>) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{{\"S\":{},\"A\":{},\"H\":{},\"P\":",
        mdp.s_count, mdp.a_count, mdp.horizon
    ));
    write_nested(&mut out, &vec4(&mdp.p));
    out.push_str(",\"R\":");
    write_nested(&mut out, &vec3(&mdp.r));
    out.push_str(",\"phi\":");
    match phi {
        Some(p) => write_nested(&mut out, &vec3(p)),
        None => out.push_str("null"),
    }
    out.push_str(",\"x1\":");
    write_nested(&mut out, &vec1(&mdp.x1));
    out.push('}');
    out
}

/// Serializes a tabular MDP (no feature map; `phi` is null).
pub fn tabular_to_json(mdp: &TabularMdp) -> String {
    mdp_to_json(mdp, None)
}

/// Serializes a linear MDP with its feature map.
pub fn linear_to_json(lin: &LinearMdp) -> String {
    mdp_to_json(&lin.base, Some(&lin.phi))
}

fn reals_1d(v: &Value, what: &str) -> Result<Vec<f64>> {
    v.as_array()
        .ok_or_else(|| Error::invalid_argument(format!("{what} must be an array")))?
        .iter()
        .map(|x| {
            x.as_f64()
                .ok_or_else(|| Error::invalid_argument(format!("{what} entries must be numbers")))
        })
        .collect()
}

fn reals_2d(v: &Value, what: &str) -> Result<Vec<Vec<f64>>> {
    v.as_array()
        .ok_or_else(|| Error::invalid_argument(format!("{what} must be an array")))?
        .iter()
        .map(|x| reals_1d(x, what))
        .collect()
}

fn reals_3d(v: &Value, what: &str) -> Result<Vec<Vec<Vec<f64>>>> {
    v.as_array()
        .ok_or_else(|| Error::invalid_argument(format!("{what} must be an array")))?
        .iter()
        .map(|x| reals_2d(x, what))
        .collect()
}

fn reals_4d(v: &Value, what: &str) -> Result<Vec<Vec<Vec<Vec<f64>>>>> {
    v.as_array()
        .ok_or_else(|| Error::invalid_argument(format!("{what} must be an array")))?
        .iter()
        .map(|x| reals_3d(x, what))
        .collect()
}

/// Parses an MDP document. Returns the tabular MDP and the feature map when
/// `phi` is present. Noise and reward-realization attributes are
/// construction-time properties and are not part of the document.
pub fn mdp_from_json(text: &str) -> Result<(TabularMdp, Option<Vec<Vec<Vec<f64>>>>)> {
    let doc: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    let obj = doc
        .as_object()
        .ok_or_else(|| Error::invalid_argument("MDP document must be a JSON object"))?;
    let field = |k: &str| {
        obj.get(k)
            .ok_or_else(|| Error::invalid_argument(format!("missing field {k}")))
    };
    let p = reals_4d(field("P")?, "P")?;
    let r = reals_3d(field("R")?, "R")?;
    let x1 = reals_1d(field("x1")?, "x1")?;
    let mdp = TabularMdp::new(p, r, 0.0, x1)?;
    let s = field("S")?.as_u64().unwrap_or(0) as usize;
    let a = field("A")?.as_u64().unwrap_or(0) as usize;
    let h = field("H")?.as_u64().unwrap_or(0) as usize;
    if (s, a, h) != (mdp.s_count, mdp.a_count, mdp.horizon) {
        return Err(Error::invalid_argument(
            "declared S/A/H disagree with table shapes",
        ));
    }
    let phi = match field("phi")? {
        Value::Null => None,
        v => Some(reals_3d(v, "phi")?),
    };
    Ok((mdp, phi))
}

/// FNV-1a 64-bit hash; used for provenance fingerprints of serialized inputs.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::generate::build_linear_mdp;

    #[test]
    fn round_trip_is_bit_exact() {
        let lin = build_linear_mdp(3, 4, 2, 3, 11).unwrap();
        let text = linear_to_json(&lin);
        let (back, phi) = mdp_from_json(&text).unwrap();
        assert_eq!(back.p, lin.base.p);
        assert_eq!(back.r, lin.base.r);
        assert_eq!(back.x1, lin.base.x1);
        assert_eq!(phi.as_ref(), Some(&lin.phi));
        // field order is pinned
        let s_pos = text.find("\"S\"").unwrap();
        let p_pos = text.find("\"P\"").unwrap();
        let phi_pos = text.find("\"phi\"").unwrap();
        let x1_pos = text.find("\"x1\"").unwrap();
        assert!(s_pos < p_pos && p_pos < phi_pos && phi_pos < x1_pos);
    }

    #[test]
    fn real_format_round_trips_awkward_values() {
        for &x in &[0.05f64, 1.0 / 3.0, 2.0_f64.powi(-40), 123456.789] {
            let s = fmt_real(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits());
        }
    }
}
