use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::GeoPoint;
use crate::views::{ViewConfig, ViewMatrices};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Geotext,
    TwitterUs,
    TwitterWorld,
    Synthetic,
    #[default]
    Custom,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Provenance::Geotext => "geotext",
            Provenance::TwitterUs => "twitter-us",
            Provenance::TwitterWorld => "twitter-world",
            Provenance::Synthetic => "synthetic",
            Provenance::Custom => "custom",
        };
        f.write_str(s)
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Argument(format!("unknown provenance {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct User {
    pub id: String,
    pub location: GeoPoint,
    pub text: String,
    pub split: Split,
}

/// One JSON-lines record.
#[derive(Serialize, Deserialize)]
struct UserRecord {
    id: String,
    lat: f64,
    lon: f64,
    text: String,
    split: Split,
}

/// Users with coordinates and split tags, plus raw mention pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub users: Vec<User>,
    pub mentions: Vec<(String, String)>,
    pub provenance: Provenance,
}

impl DatasetBundle {
    pub fn new(
        users: Vec<User>,
        mentions: Vec<(String, String)>,
        provenance: Provenance,
    ) -> Result<Self> {
        let mut seen = HashSet::with_capacity(users.len());
        for u in &users {
            if !seen.insert(u.id.as_str()) {
                return Err(Error::Argument(format!("duplicate user id {:?}", u.id)));
            }
        }
        Ok(Self {
            users,
            mentions,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    /// Indices of users in `split`, in file order.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.users.len())
            .filter(|&i| self.users[i].split == split)
            .collect()
    }

    pub fn locations(&self) -> Vec<GeoPoint> {
        self.users.iter().map(|u| u.location).collect()
    }

    pub fn build_views(&self, config: &ViewConfig) -> Result<ViewMatrices> {
        let users: Vec<(&str, &str)> = self
            .users
            .iter()
            .map(|u| (u.id.as_str(), u.text.as_str()))
            .collect();
        ViewMatrices::build(&users, &self.mentions, config)
    }

    pub fn write_users<W: Write>(&self, mut out: W) -> Result<()> {
        for u in &self.users {
            let rec = UserRecord {
                id: u.id.clone(),
                lat: u.location.lat(),
                lon: u.location.lon(),
                text: u.text.clone(),
                split: u.split,
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write_mentions<W: Write>(&self, mut out: W) -> Result<()> {
        for (a, b) in &self.mentions {
            writeln!(out, "{a}\t{b}")?;
        }
        Ok(())
    }

    /// Writes `users.jsonl` and `edges.tsv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut users = BufWriter::new(File::create(dir.join("users.jsonl"))?);
        self.write_users(&mut users)?;
        users.flush()?;
        let mut edges = BufWriter::new(File::create(dir.join("edges.tsv"))?);
        self.write_mentions(&mut edges)?;
        edges.flush()?;
        Ok(())
    }
}

fn parse_error(path: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        msg: msg.into(),
    }
}

/// Parses JSON-lines user records. Blank lines are skipped; `path` only
/// labels errors.
pub fn parse_users<R: BufRead>(input: R, path: &str) -> Result<Vec<User>> {
    let mut users = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: UserRecord =
            serde_json::from_str(&line).map_err(|e| parse_error(path, n, e.to_string()))?;
        let location =
            GeoPoint::new(rec.lat, rec.lon).map_err(|e| parse_error(path, n, e.to_string()))?;
        if !seen.insert(rec.id.clone()) {
            return Err(parse_error(
                path,
                n,
                format!("duplicate user id {:?}", rec.id),
            ));
        }
        users.push(User {
            id: rec.id,
            location,
            text: rec.text,
            split: rec.split,
        });
    }
    Ok(users)
}

/// Parses two-column tab-separated mention pairs. Blank lines and lines
/// starting with `#` are skipped.
pub fn parse_mentions<R: BufRead>(input: R, path: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').map(str::trim).collect();
        match fields.as_slice() {
            [a, b] if !a.is_empty() && !b.is_empty() => pairs.push((a.to_string(), b.to_string())),
            _ => {
                return Err(parse_error(
                    path,
                    i + 1,
                    format!("expected 2 tab-separated fields, found {}", fields.len()),
                ))
            }
        }
    }
    Ok(pairs)
}

pub fn load_dataset(users: &Path, edges: &Path, provenance: Provenance) -> Result<DatasetBundle> {
    let label = users.display().to_string();
    let parsed = parse_users(BufReader::new(File::open(users)?), &label)?;
    let label = edges.display().to_string();
    let mentions = parse_mentions(BufReader::new(File::open(edges)?), &label)?;
    log::info!(
        "loaded {} users ({} train) and {} mention pairs",
        parsed.len(),
        parsed.iter().filter(|u| u.split == Split::Train).count(),
        mentions.len()
    );
    DatasetBundle::new(parsed, mentions, provenance)
}
