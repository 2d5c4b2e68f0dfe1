//! Human and structured (JSON) renderings of command results.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use duty_energy::units::SECONDS_PER_HOUR;
use duty_energy::{
    ChargeMilliampSecond, CurrentTrace, CycleAccounting, EnergyReport, PhaseLabel, PhaseSegment, ScenarioProfile,
    SweepAxis, SweepRow, ValidationReport,
};
use serde::Serialize;

use crate::Format;

pub const SCHEMA_VERSION: u32 = 1;

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

#[derive(Serialize)]
struct ReportJson<'a> {
    scenario: Option<&'a str>,
    mode: &'a str,
    total_time_s: f64,
    operating_voltage_v: f64,
    q_total_mah: f64,
    q_total_mas: f64,
    q_total_coulomb: f64,
    p_total_mwh: f64,
    p_total_joule: f64,
    i_overall_ma: f64,
    i_1_ma: f64,
    i_2_ma: f64,
    /// Charge per phase in mA·s, in timeline order.
    breakdown: BTreeMap<PhaseLabel, f64>,
    accounting: CycleAccounting,
    truncated_init: bool,
}

impl<'a> ReportJson<'a> {
    fn new(name: Option<&'a str>, r: &'a EnergyReport) -> Self {
        Self {
            scenario: name,
            mode: r.mode.as_str(),
            total_time_s: r.total_time_s,
            operating_voltage_v: r.operating_voltage_v,
            q_total_mah: r.q_total_mah(),
            q_total_mas: r.q_total.value(),
            q_total_coulomb: r.q_total_coulomb(),
            p_total_mwh: r.p_total_mwh(),
            p_total_joule: r.p_total_joule(),
            i_overall_ma: r.i_overall.value(),
            i_1_ma: r.i_1.value(),
            i_2_ma: r.i_2.value(),
            breakdown: r.breakdown.iter().map(|(k, v)| (*k, v.value())).collect(),
            accounting: r.accounting,
            truncated_init: r.truncated_init,
        }
    }
}

#[derive(Serialize)]
struct Versioned<T> {
    schema_version: u32,
    #[serde(flatten)]
    body: T,
}

fn versioned<T: Serialize>(body: T) -> String {
    json(&Versioned {
        schema_version: SCHEMA_VERSION,
        body,
    })
}

pub fn predict(format: Format, profile: &ScenarioProfile, r: &EnergyReport) -> String {
    if format == Format::Structured {
        return versioned(ReportJson::new(profile.name.as_deref(), r));
    }
    let mut s = String::new();
    let a = &r.accounting;
    let name = profile.name.as_deref().unwrap_or("scenario");
    let _ = writeln!(s, "{name} ({}), T = {} s at {} V", r.mode, r.total_time_s, r.operating_voltage_v);
    let _ = writeln!(
        s,
        "  Q_total    {:.4} mAh  ({:.2} mA·s, {:.3} C)",
        r.q_total_mah(),
        r.q_total.value(),
        r.q_total_coulomb()
    );
    let _ = writeln!(s, "  P_total    {:.4} mWh  ({:.3} J)", r.p_total_mwh(), r.p_total_joule());
    let _ = writeln!(
        s,
        "  I_overall  {:.4} mA   (I_1 {:.4} mA, I_2 {:.4} mA)",
        r.i_overall.value(),
        r.i_1.value(),
        r.i_2.value()
    );
    if r.truncated_init {
        let _ = writeln!(s, "  operating time ends inside the init sequence");
    } else {
        let _ = writeln!(
            s,
            "  timeline   init {:.4} s, {} full cycles of {:.4} s, partial {:.4} s",
            a.t_init, a.n_full_cycles, a.t_one_cycle, a.t_partial
        );
    }
    let _ = writeln!(s, "  {:<14} {:>12} {:>10} {:>7}", "phase", "mA·s", "mAh", "share");
    let q = r.q_total.value();
    for (label, c) in &r.breakdown {
        let share = if q > 0.0 { 100.0 * c.value() / q } else { 0.0 };
        let _ = writeln!(
            s,
            "  {:<14} {:>12.3} {:>10.5} {:>6.2}%",
            label.as_str(),
            c.value(),
            c.mah(),
            share
        );
    }
    s
}

pub fn validation(format: Format, r: &ValidationReport) -> String {
    if format == Format::Structured {
        return versioned(r);
    }
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<22} {:<15} {:>10} {:>10} {:>9} {:>10}",
        "case", "mode", "predicted", "measured", "accuracy", "reference"
    );
    let opt = |v: Option<f64>, prec: usize| v.map_or("-".to_string(), |x| format!("{x:.prec$}"));
    for c in &r.cases {
        let _ = writeln!(
            s,
            "{:<22} {:<15} {:>10} {:>10} {:>8}% {:>10}",
            c.name,
            c.mode.as_deref().unwrap_or("-"),
            opt(c.predicted_mwh, 4),
            format!("{}", c.measured_mwh),
            opt(c.accuracy_pct, 2),
            opt(c.reference_prediction_mwh, 4),
        );
        if let Some(e) = &c.error {
            let _ = writeln!(s, "  error: {e}");
        }
    }
    let g = &r.aggregate;
    let _ = writeln!(
        s,
        "{} cases, {} errors, min accuracy {}%, mean {}%, threshold {}%: {}",
        g.n_cases,
        g.n_errors,
        opt(g.min_accuracy_pct, 2),
        opt(g.mean_accuracy_pct, 2),
        g.threshold_pct,
        if g.pass { "PASS" } else { "FAIL" }
    );
    s
}

#[derive(Serialize)]
struct SweepRowJson<'a> {
    point: BTreeMap<&'a str, &'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<ReportJson<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

#[derive(Serialize)]
struct SweepJson<'a> {
    axes: Vec<&'a str>,
    rows: Vec<SweepRowJson<'a>>,
}

pub fn sweep(format: Format, axes: &[SweepAxis], rows: &[SweepRow]) -> String {
    if format == Format::Structured {
        return versioned(SweepJson {
            axes: axes.iter().map(|a| a.key.as_str()).collect(),
            rows: rows
                .iter()
                .map(|r| SweepRowJson {
                    point: r.point.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect(),
                    report: r.report.as_ref().map(|rep| ReportJson::new(None, rep)),
                    error: r.error.as_deref(),
                })
                .collect(),
        });
    }
    let mut s = String::new();
    for a in axes {
        let _ = write!(s, "{:>16} ", a.key);
    }
    let _ = writeln!(s, "{:>12} {:>12} {:>12}", "I_overall mA", "Q mAh", "P mWh");
    for r in rows {
        for (_, v) in &r.point {
            let _ = write!(s, "{v:>16} ");
        }
        match (&r.report, &r.error) {
            (Some(rep), _) => {
                let _ = writeln!(
                    s,
                    "{:>12.4} {:>12.4} {:>12.4}",
                    rep.i_overall.value(),
                    rep.q_total_mah(),
                    rep.p_total_mwh()
                );
            }
            (None, e) => {
                let _ = writeln!(s, "error: {}", e.as_deref().unwrap_or("unknown"));
            }
        }
    }
    s
}

#[derive(Serialize)]
struct IntegrationJson<'a> {
    file: &'a str,
    samples: usize,
    duration_s: f64,
    sample_rate_hz: Option<f64>,
    clamped_negative: usize,
    q_mas: f64,
    q_mah: f64,
    q_coulomb: f64,
    mean_current_ma: f64,
    voltage_v: f64,
    energy_mwh: f64,
}

pub fn integration(format: Format, file: &Path, trace: &CurrentTrace, q: ChargeMilliampSecond, volts: f64) -> String {
    let d = trace.duration();
    let body = IntegrationJson {
        file: &file.to_string_lossy(),
        samples: trace.len(),
        duration_s: d,
        sample_rate_hz: trace.sample_rate(),
        clamped_negative: trace.clamped_negative(),
        q_mas: q.value(),
        q_mah: q.value() / SECONDS_PER_HOUR,
        q_coulomb: q.value() / 1000.0,
        mean_current_ma: if d > 0.0 { q.value() / d } else { 0.0 },
        voltage_v: volts,
        energy_mwh: q.value() / SECONDS_PER_HOUR * volts,
    };
    if format == Format::Structured {
        return versioned(body);
    }
    let mut s = String::new();
    let rate = body.sample_rate_hz.map_or("irregular".to_string(), |r| format!("{r} Hz"));
    let _ = writeln!(s, "{}: {} samples ({rate}) over {} s", body.file, body.samples, body.duration_s);
    let _ = writeln!(
        s,
        "  charge   {:.4} mA·s = {:.6} mAh = {:.6} C",
        body.q_mas, body.q_mah, body.q_coulomb
    );
    let _ = writeln!(s, "  mean     {:.5} mA", body.mean_current_ma);
    let _ = writeln!(s, "  energy   {:.5} mWh at {} V", body.energy_mwh, volts);
    if body.clamped_negative > 0 {
        let _ = writeln!(s, "  {} negative samples clamped to zero", body.clamped_negative);
    }
    s
}

#[derive(Serialize)]
struct SegmentsJson<'a> {
    file: &'a str,
    segments: &'a [PhaseSegment],
}

pub fn segments(format: Format, file: &Path, segs: &[PhaseSegment]) -> String {
    if format == Format::Structured {
        return versioned(SegmentsJson {
            file: &file.to_string_lossy(),
            segments: segs,
        });
    }
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>4} {:<14} {:>12} {:>12} {:>12} {:>12}",
        "#", "label", "start s", "end s", "mean mA", "charge mA·s"
    );
    for (i, g) in segs.iter().enumerate() {
        let _ = writeln!(
            s,
            "{:>4} {:<14} {:>12.4} {:>12.4} {:>12.5} {:>12.4}",
            i,
            g.label.map_or("-", |l| l.as_str()),
            g.start,
            g.end,
            g.mean_current,
            g.charge
        );
    }
    let _ = writeln!(s, "{} segments", segs.len());
    s
}
