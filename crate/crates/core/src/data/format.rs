//! Line-oriented UTF-8 dataset format.
//!
//! ```text
//! file     := header NL { record NL }
//! header   := "npl-dataset" SP version SP classes SP dim
//! record   := comment | blank | bag | instance
//! comment  := "#" { any }
//! bag      := "bag" SP bag-id { SP fraction }          (exactly `classes` fractions)
//! instance := "inst" SP id SP group SP label { SP real } (exactly `dim` reals)
//! group    := "supervised:" source-id | "bag:" bag-id | "eval"
//! label    := class-index | "-"
//! ```
//!
//! Fields are separated by single spaces. Reals use the shortest decimal
//! representation that round-trips, so save followed by load is bit-exact.
//! A bag's member order is the order of its instance records.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::domain::{Bag, BagId, Dataset, Instance, InstanceId, Origin, Proportion, SourceId};
use crate::error::{Error, Result};

pub const FORMAT_TAG: &str = "npl-dataset";
pub const FORMAT_VERSION: u32 = 1;

pub fn render_dataset(dataset: &Dataset) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{FORMAT_TAG} {FORMAT_VERSION} {} {}",
        dataset.classes(),
        dataset.dim()
    )
    .unwrap();
    for bag in dataset.bags() {
        write!(out, "bag {}", bag.id).unwrap();
        for v in bag.tcr.values() {
            write!(out, " {v}").unwrap();
        }
        out.push('\n');
    }
    for inst in dataset.instances() {
        let group = match inst.origin {
            Origin::Supervised(s) => format!("supervised:{s}"),
            Origin::Bag(b) => format!("bag:{b}"),
            Origin::Eval => "eval".to_string(),
        };
        let label = inst
            .true_class
            .map_or_else(|| "-".to_string(), |c| c.to_string());
        write!(out, "inst {} {group} {label}", inst.id).unwrap();
        for v in &inst.features {
            write!(out, " {v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, render_dataset(dataset)).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text)
}

fn parse_field<T: FromStr>(token: &str, what: &str, line: usize) -> Result<T> {
    token.parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid {what} {token:?}"),
    })
}

fn parse_real(token: &str, line: usize) -> Result<f64> {
    let v: f64 = parse_field(token, "number", line)?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("non-finite number {token:?}"),
        });
    }
    Ok(v)
}

pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (classes, dim) = loop {
        let Some((n, line)) = lines.next() else {
            return Err(Error::Parse {
                line: 1,
                message: "missing header".into(),
            });
        };
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = line.split(' ').collect();
        if tokens.len() != 4 || tokens[0] != FORMAT_TAG {
            return Err(Error::Parse {
                line: n,
                message: format!("expected header \"{FORMAT_TAG} <version> <classes> <dim>\""),
            });
        }
        let version: u32 = parse_field(tokens[1], "version", n)?;
        if version != FORMAT_VERSION {
            return Err(Error::Parse {
                line: n,
                message: format!("unsupported version {version}"),
            });
        }
        break (
            parse_field::<usize>(tokens[2], "class count", n)?,
            parse_field::<usize>(tokens[3], "dimension", n)?,
        );
    };

    // bag id -> (declaring line, raw proportion, members)
    let mut bags: BTreeMap<BagId, (usize, Vec<f64>, Vec<InstanceId>)> = BTreeMap::new();
    let mut bag_order = Vec::new();
    let mut pending: Vec<(usize, Instance)> = Vec::new();

    for (n, line) in lines {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = line.split(' ').collect();
        match tokens[0] {
            "bag" => {
                if tokens.len() < 2 {
                    return Err(Error::Parse {
                        line: n,
                        message: "bag record without id".into(),
                    });
                }
                let id = BagId(parse_field(tokens[1], "bag id", n)?);
                if tokens.len() == 2 {
                    return Err(Error::Parse {
                        line: n,
                        message: format!("empty bag record {id}"),
                    });
                }
                if tokens.len() != 2 + classes {
                    return Err(Error::Parse {
                        line: n,
                        message: format!(
                            "bag {id} has {} proportions, expected {classes}",
                            tokens.len() - 2
                        ),
                    });
                }
                let values = tokens[2..]
                    .iter()
                    .map(|t| parse_real(t, n))
                    .collect::<Result<Vec<_>>>()?;
                if bags.insert(id, (n, values, Vec::new())).is_some() {
                    return Err(Error::Parse {
                        line: n,
                        message: format!("bag {id} declared twice"),
                    });
                }
                bag_order.push(id);
            }
            "inst" => {
                if tokens.len() != 4 + dim {
                    return Err(Error::Parse {
                        line: n,
                        message: format!(
                            "instance record has {} fields, expected {}",
                            tokens.len(),
                            4 + dim
                        ),
                    });
                }
                let id = InstanceId(parse_field(tokens[1], "instance id", n)?);
                let origin = if tokens[2] == "eval" {
                    Origin::Eval
                } else if let Some(s) = tokens[2].strip_prefix("supervised:") {
                    Origin::Supervised(SourceId(parse_field(s, "source id", n)?))
                } else if let Some(b) = tokens[2].strip_prefix("bag:") {
                    Origin::Bag(BagId(parse_field(b, "bag id", n)?))
                } else {
                    return Err(Error::Parse {
                        line: n,
                        message: format!("unknown group {:?}", tokens[2]),
                    });
                };
                let true_class = match tokens[3] {
                    "-" => None,
                    t => Some(parse_field::<usize>(t, "class", n)?),
                };
                let features = tokens[4..]
                    .iter()
                    .map(|t| parse_real(t, n))
                    .collect::<Result<Vec<_>>>()?;
                pending.push((
                    n,
                    Instance {
                        id,
                        origin,
                        features,
                        true_class,
                    },
                ));
            }
            other => {
                return Err(Error::Parse {
                    line: n,
                    message: format!("unknown record type {other:?}"),
                })
            }
        }
    }

    let mut instances = Vec::with_capacity(pending.len());
    for (n, inst) in pending {
        if let Origin::Bag(b) = inst.origin {
            let entry = bags.get_mut(&b).ok_or_else(|| Error::Parse {
                line: n,
                message: format!("instance {} refers to undeclared bag {b}", inst.id),
            })?;
            entry.2.push(inst.id);
        }
        instances.push(inst);
    }

    let mut by_id: HashMap<BagId, (usize, Vec<f64>, Vec<InstanceId>)> = bags.into_iter().collect();
    let mut out_bags = Vec::with_capacity(bag_order.len());
    for id in bag_order {
        let (line, values, members) = by_id.remove(&id).expect("declared bag");
        if members.is_empty() {
            return Err(Error::Parse {
                line,
                message: format!("bag {id} has no instances"),
            });
        }
        let tcr = Proportion::new(values)
            .map_err(|e| Error::Validation(format!("bag {id}: {e}")))?;
        out_bags.push(Bag::new(id, members, tcr)?);
    }
    Dataset::new(classes, dim, instances, out_bags)
}
