//! CSV writers for evaluation outputs.

use std::io::Write;

use crate::data::io::csv_err;
use crate::error::Result;
use crate::eval::compare::{AucCell, AucStat};
use crate::eval::roc::RocCurve;
use crate::eval::score::ScoreSet;
use crate::eval::summary::{Summary, DENSITY_BIN_WIDTH, DENSITY_LOG_MIN};

fn num(v: f64) -> String {
    format!("{v:e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn channel_label(names: &[String], c: Option<usize>) -> String {
    c.map(|c| names[c].clone()).unwrap_or_else(|| "aggregate".into())
}

/// `sample,module,label,<one column per channel>,aggregate`.
pub fn write_scores(w: impl Write, scores: &ScoreSet) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["sample".to_string(), "module".into(), "label".into()];
    header.extend(scores.channel_names.iter().cloned());
    header.push("aggregate".into());
    out.write_record(&header).map_err(csv_err)?;
    for s in &scores.scores {
        let mut row = vec![s.sample_id.to_string(), s.module.to_string(), s.label.to_string()];
        row.extend(s.channels.iter().map(|&v| num(v)));
        row.push(num(s.aggregate));
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// `fpr,tpr`.
pub fn write_roc(w: impl Write, roc: &RocCurve) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["fpr", "tpr"]).map_err(csv_err)?;
    for &(f, t) in &roc.points {
        out.write_record([num(f), num(t)]).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// `fault,module,auc_multi,sd_multi,auc_single,sd_single,delta,positives,negatives`.
/// Pooled rows use module `all`; missing cells are left empty.
pub fn write_auc_table(w: impl Write, cells: &[AucCell]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "fault",
        "module",
        "auc_multi",
        "sd_multi",
        "auc_single",
        "sd_single",
        "delta",
        "positives",
        "negatives",
    ])
    .map_err(csv_err)?;
    for c in cells {
        let auc = |s: Option<AucStat>| opt(s.map(|s| s.auc));
        let sd = |s: Option<AucStat>| opt(s.and_then(|s| s.sd));
        let any = c.multi.or(c.single);
        out.write_record([
            c.fault.name().to_string(),
            c.module.map(|m| m.to_string()).unwrap_or_else(|| "all".into()),
            auc(c.multi),
            sd(c.multi),
            auc(c.single),
            sd(c.single),
            opt(c.delta()),
            any.map(|s| s.positives.to_string()).unwrap_or_default(),
            any.map(|s| s.negatives.to_string()).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// `module,channel,label,count,min,q1,median,q3,max,mean`; channel
/// `aggregate` holds per-sample scores.
pub fn write_boxstats(w: impl Write, summary: &Summary, channel_names: &[String]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["module", "channel", "label", "count", "min", "q1", "median", "q3", "max", "mean"])
        .map_err(csv_err)?;
    for (&(module, ch, label), b) in &summary.boxes {
        out.write_record([
            module.to_string(),
            channel_label(channel_names, ch),
            label.to_string(),
            b.count.to_string(),
            num(b.min),
            num(b.q1),
            num(b.median),
            num(b.q3),
            num(b.max),
            num(b.mean),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// `module,channel,label,log10_lo,log10_hi,count,density` where density is
/// the fraction of the group per decade.
pub fn write_density(w: impl Write, summary: &Summary, channel_names: &[String]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["module", "channel", "label", "log10_lo", "log10_hi", "count", "density"])
        .map_err(csv_err)?;
    for (&(module, ch, label), counts) in &summary.densities {
        let total: usize = counts.iter().sum();
        for (k, &n) in counts.iter().enumerate() {
            let lo = DENSITY_LOG_MIN + k as f64 * DENSITY_BIN_WIDTH;
            out.write_record([
                module.to_string(),
                channel_label(channel_names, ch),
                label.to_string(),
                format!("{lo}"),
                format!("{}", lo + DENSITY_BIN_WIDTH),
                n.to_string(),
                num(n as f64 / (total as f64 * DENSITY_BIN_WIDTH)),
            ])
            .map_err(csv_err)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// `fault,rank,channel,auc`.
pub fn write_channel_ranking(
    w: impl Write,
    ranking: &[(crate::data::FaultClass, Vec<(usize, f64)>)],
    channel_names: &[String],
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["fault", "rank", "channel", "auc"]).map_err(csv_err)?;
    for (fault, ranked) in ranking {
        for (r, &(c, auc)) in ranked.iter().enumerate() {
            out.write_record([fault.name().to_string(), (r + 1).to_string(), channel_names[c].clone(), num(auc)])
                .map_err(csv_err)?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FaultClass, Label};
    use crate::eval::score::AnomalyScore;
    use crate::eval::summary::summarize;

    #[test]
    fn score_and_summary_headers() {
        let s = ScoreSet {
            channel_names: vec!["MOD-V".into(), "DV/DT".into()],
            scores: vec![AnomalyScore {
                sample_id: 7,
                module: 2,
                label: Label::Fault(FaultClass::SnsPps),
                channels: vec![0.5, 1.5],
                aggregate: 1.0,
            }],
            replicas: None,
        };
        let mut out = Vec::new();
        write_scores(&mut out, &s).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "sample,module,label,MOD-V,DV/DT,aggregate\n7,2,SNS-PPS,5e-1,1.5e0,1e0\n"
        );
        let summary = summarize(&s).unwrap();
        let mut out = Vec::new();
        write_boxstats(&mut out, &summary, &s.channel_names).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("module,channel,label,count,min,q1,median,q3,max,mean\n2,aggregate,SNS-PPS,1,"));
        let mut out = Vec::new();
        write_density(&mut out, &summary, &s.channel_names).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 1 + 3 * 32);
    }
}
