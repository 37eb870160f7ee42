//! CSV ingestion and model assembly.

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use nalgebra::DMatrix;
use seqred::designs::Tournament;
use seqred::model::Incidence;
use seqred::{Family, ModelSpec};

use crate::CliError;

/// A tournament read from disk, with player labels in file order.
#[derive(Debug, Clone)]
pub struct TournamentData {
    pub players: Vec<String>,
    pub covariate_names: Vec<String>,
    pub tournament: Tournament,
    pub winners: Vec<f64>,
}

fn open(path: &Path) -> Result<csv::Reader<File>, CliError> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn record_error(path: &Path, e: csv::Error) -> CliError {
    let loc = e
        .position()
        .map(|p| format!(" (line {})", p.line()))
        .unwrap_or_default();
    CliError::Input(format!("{}{loc}: {e}", path.display()))
}

fn parse_f64(path: &Path, line: u64, column: usize, name: &str, field: &str) -> Result<f64, CliError> {
    field.parse::<f64>().map_err(|_| {
        CliError::Input(format!(
            "{}: line {line}, column {} ({name}): cannot parse {field:?} as a number",
            path.display(),
            column + 1
        ))
    })
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

/// Reads `player_id, covariates…` and `match_id, player1, player2, winner`.
pub fn read_tournament(contests: &Path, players: &Path) -> Result<TournamentData, CliError> {
    let mut rdr = open(players)?;
    let header = rdr.headers().map_err(|e| record_error(players, e))?.clone();
    if header.is_empty() || &header[0] != "player_id" {
        return Err(CliError::Input(format!(
            "{}: line 1: first column must be player_id",
            players.display()
        )));
    }
    let covariate_names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut ids = Vec::new();
    let mut index = HashMap::new();
    let mut cov = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| record_error(players, e))?;
        let line = line_of(&rec);
        let id = rec[0].to_string();
        if index.insert(id.clone(), ids.len()).is_some() {
            return Err(CliError::Input(format!(
                "{}: line {line}, column 1: duplicate player_id {id:?}",
                players.display()
            )));
        }
        ids.push(id);
        for (j, name) in covariate_names.iter().enumerate() {
            cov.push(parse_f64(players, line, j + 1, name, &rec[j + 1])?);
        }
    }
    if ids.is_empty() {
        return Err(CliError::Input(format!("{}: no players", players.display())));
    }
    let p = covariate_names.len();
    let covariates = DMatrix::from_row_slice(ids.len(), p, &cov);

    let mut rdr = open(contests)?;
    let header = rdr.headers().map_err(|e| record_error(contests, e))?.clone();
    let expected = ["match_id", "player1", "player2", "winner"];
    if header.len() != 4 || header.iter().zip(expected).any(|(a, b)| a != b) {
        return Err(CliError::Input(format!(
            "{}: line 1: header must be match_id,player1,player2,winner",
            contests.display()
        )));
    }
    let mut pairs = Vec::new();
    let mut winners = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| record_error(contests, e))?;
        let line = line_of(&rec);
        let lookup = |col: usize| {
            index.get(&rec[col]).copied().ok_or_else(|| {
                CliError::Input(format!(
                    "{}: line {line}, column {}: unknown player {:?}",
                    contests.display(),
                    col + 1,
                    &rec[col]
                ))
            })
        };
        let a = lookup(1)?;
        let b = lookup(2)?;
        if a == b {
            return Err(CliError::Input(format!(
                "{}: line {line}: a player cannot meet themselves",
                contests.display()
            )));
        }
        let w = match &rec[3] {
            "1" => 1.0,
            "0" | "2" => 0.0,
            other => {
                return Err(CliError::Input(format!(
                    "{}: line {line}, column 4: winner must be 1 (player1) or 0/2 (player2), got {other:?}",
                    contests.display()
                )))
            }
        };
        pairs.push((a, b));
        winners.push(w);
    }
    let tournament = Tournament::new(ids.len(), pairs, covariates)?;
    Ok(TournamentData {
        players: ids,
        covariate_names,
        tournament,
        winners,
    })
}

pub fn tournament_model(data: &TournamentData, family: Family) -> Result<ModelSpec, CliError> {
    let names = if data.covariate_names.len() == 1 {
        vec!["beta".to_string()]
    } else {
        data.covariate_names.iter().map(|c| format!("beta_{c}")).collect()
    };
    Ok(data
        .tournament
        .template(family)?
        .with_names(names, vec!["sigma".to_string()])?
        .with_response(data.winners.clone())?)
}

/// Reads `y, covariates…, group1, …, groupL` and builds the nested model
/// `η = α + βᵀx + Σ_l σ_l u_l[group]`. A level-`l` group is identified by its
/// own label together with the labels of all higher levels.
pub fn read_multilevel(path: &Path, family: Family) -> Result<(ModelSpec, Vec<String>), CliError> {
    let mut rdr = open(path)?;
    let header = rdr.headers().map_err(|e| record_error(path, e))?.clone();
    if header.is_empty() || &header[0] != "y" {
        return Err(CliError::Input(format!("{}: line 1: first column must be y", path.display())));
    }
    let group_cols: Vec<usize> = (1..header.len()).filter(|c| header[*c].starts_with("group")).collect();
    if group_cols.is_empty() {
        return Err(CliError::Input(format!(
            "{}: line 1: at least one group column (group1, group2, ...) is required",
            path.display()
        )));
    }
    let first_group = group_cols[0];
    if group_cols != (first_group..header.len()).collect::<Vec<_>>() {
        return Err(CliError::Input(format!(
            "{}: line 1: group columns must come last",
            path.display()
        )));
    }
    for (l, c) in group_cols.iter().enumerate() {
        if header[*c] != format!("group{}", l + 1) {
            return Err(CliError::Input(format!(
                "{}: line 1, column {}: expected group{}",
                path.display(),
                c + 1,
                l + 1
            )));
        }
    }
    let covariates: Vec<String> = (1..first_group).map(|c| header[c].to_string()).collect();
    let levels = group_cols.len();
    let mut y = Vec::new();
    let mut x = Vec::new();
    let mut keys: Vec<Vec<Vec<String>>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| record_error(path, e))?;
        let line = line_of(&rec);
        y.push(parse_f64(path, line, 0, "y", &rec[0])?);
        x.push(1.0);
        for (j, name) in covariates.iter().enumerate() {
            x.push(parse_f64(path, line, j + 1, name, &rec[j + 1])?);
        }
        let labels: Vec<String> = group_cols.iter().map(|c| rec[*c].to_string()).collect();
        keys.push((0..levels).map(|l| labels[l..].to_vec()).collect());
    }
    let m = y.len();
    if m == 0 {
        return Err(CliError::Input(format!("{}: no observations", path.display())));
    }
    let mut offset = 0;
    let mut incidence = vec![Vec::with_capacity(levels); m];
    let mut scale_map = Vec::new();
    let mut labels = Vec::new();
    for l in 0..levels {
        let mut ids: HashMap<&Vec<String>, usize> = HashMap::new();
        for (i, k) in keys.iter().enumerate() {
            let next = ids.len();
            let id = *ids.entry(&k[l]).or_insert_with(|| {
                labels.push(format!("group{}:{}", l + 1, k[l].join("/")));
                next
            });
            incidence[i].push(Incidence::new(offset + id, 1.0));
        }
        scale_map.extend(std::iter::repeat_n(l, ids.len()));
        offset += ids.len();
    }
    let p = covariates.len() + 1;
    let design = DMatrix::from_row_slice(m, p, &x);
    let mut fixed = vec!["alpha".to_string()];
    if covariates.len() == 1 {
        fixed.push("beta".to_string());
    } else {
        fixed.extend(covariates.iter().map(|c| format!("beta_{c}")));
    }
    let scales = (1..=levels).map(|l| format!("sigma{l}")).collect();
    let spec = ModelSpec::new(offset, design, incidence, scale_map, family)?
        .with_names(fixed, scales)?
        .with_response(y)?;
    Ok((spec, labels))
}

pub fn write_tournament(dir: &Path, t: &Tournament, winners: &[f64]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(dir.join("players.csv"))?;
    let mut header = vec!["player_id".to_string()];
    header.extend((0..t.covariates.ncols()).map(|j| format!("x{}", j + 1)));
    w.write_record(&header)?;
    for i in 0..t.num_players {
        let mut row = vec![format!("p{i}")];
        row.extend((0..t.covariates.ncols()).map(|j| format!("{}", t.covariates[(i, j)])));
        w.write_record(&row)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("contests.csv"))?;
    w.write_record(["match_id", "player1", "player2", "winner"])?;
    for (r, ((a, b), y)) in t.contests.iter().zip(winners).enumerate() {
        let winner = if *y == 1.0 { "1" } else { "0" };
        w.write_record([format!("{}", r + 1), format!("p{a}"), format!("p{b}"), winner.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a nested model back as `y, x, group1, …`; group labels are the
/// effect indices within each level.
pub fn write_multilevel(path: &Path, spec: &ModelSpec) -> Result<(), CliError> {
    let levels = spec.num_scales();
    let covs = spec.num_fixed() - 1;
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["y".to_string()];
    if covs == 1 {
        header.push("x".to_string());
    } else {
        header.extend((1..=covs).map(|j| format!("x{j}")));
    }
    header.extend((1..=levels).map(|l| format!("group{l}")));
    w.write_record(&header)?;
    let y = spec.response().ok_or_else(|| CliError::Numerical("simulation produced no response".into()))?;
    let mut level_start = vec![usize::MAX; levels];
    for (j, s) in spec.scale_map().iter().enumerate() {
        level_start[*s] = level_start[*s].min(j);
    }
    for (i, row) in spec.incidence().iter().enumerate() {
        let mut rec = vec![format!("{}", y[i])];
        rec.extend((1..=covs).map(|j| format!("{}", spec.fixed_design()[(i, j)])));
        for e in row {
            let l = spec.scale_map()[e.effect];
            rec.push(format!("g{}", e.effect - level_start[l]));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
