//! Deterministic demo datasets mirroring the schemas of the two public
//! benchmarks, for offline runs and the test suite. Both generators build an
//! age-structured population whose feature-outcome couplings rotate across
//! age groups, so sequential age-sliced training exhibits genuine
//! distribution shift and forgetting.
//!
//! These are statistical stand-ins, not the source datasets; point the
//! prepare command at your own downloaded copies to run on real data.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::seed;
use crate::tabular::{
    ColumnKind, ColumnSpec, DatasetSchema, LabelRule, LabelSpec, SliceRule, SplitRatios,
};

fn normal<R: Rng>(rng: &mut R, mean: f64, sd: f64) -> f64 {
    loop {
        let u1: f64 = rng.gen();
        if u1 > f64::MIN_POSITIVE {
            let u2: f64 = rng.gen();
            let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
            return mean + sd * z;
        }
    }
}

fn pick<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let u: f64 = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

fn bernoulli<R: Rng>(rng: &mut R, p: f64) -> usize {
    usize::from(rng.gen::<f64>() < p)
}

/// Age group regimes of the cardiac fixture.
#[derive(Clone, Copy, PartialEq)]
enum AgeGroup {
    Young,
    Mid,
    Old,
}

/// 303-row cardiac-style table: 13 input attributes plus a 0-4 disease-level
/// label (binarized as level > 0 downstream). Three rows carry a missing age
/// and drop out at slicing, leaving the 300-row analytic cohort. Missing `ca`
/// and `thal` cells appear as `?`.
///
/// Shift structure: in the young cohort the outcome couples to chest-pain
/// type, thalassemia marker, and exercice-induced signals; in the old cohort
/// those fade and pressure/cholesterol/vessel-count dominate.
pub fn heart_like_csv(seed_value: u64) -> String {
    let mut rng = seed::rng(seed_value, &[0x4ea7_u64]);
    let mut out = String::from("age,sex,cp,trestbps,chol,fbs,restecg,thalach,exang,oldpeak,slope,ca,thal,num\n");
    let missing_age_rows = [42usize, 137, 256];

    for row in 0..303 {
        let group = match pick(&mut rng, &[0.30, 0.40, 0.30]) {
            0 => AgeGroup::Young,
            1 => AgeGroup::Mid,
            _ => AgeGroup::Old,
        };
        let age: u32 = match group {
            AgeGroup::Young => rng.gen_range(29..35),
            AgeGroup::Mid => rng.gen_range(35..65),
            AgeGroup::Old => rng.gen_range(65..78),
        };
        let prevalence = match group {
            AgeGroup::Young => 0.30,
            AgeGroup::Mid => 0.55,
            AgeGroup::Old => 0.72,
        };
        // features follow the true condition; the recorded label carries
        // intrinsic diagnosis noise
        let d = bernoulli(&mut rng, prevalence);
        let df = d as f64;
        let d_label = if rng.gen::<f64>() < 0.05 { 1 - d } else { d };
        let num = if d_label == 0 { 0 } else { 1 + pick(&mut rng, &[0.55, 0.25, 0.12, 0.08]) };

        let sex = bernoulli(&mut rng, 0.55 + 0.18 * df);

        // chest-pain type: asymptomatic (4) marks disease crisply in the
        // young and fades into the background rate with age
        let p_cp4 = match group {
            AgeGroup::Young => 0.10 + 0.72 * df,
            AgeGroup::Mid => 0.15 + 0.58 * df,
            AgeGroup::Old => 0.22 + 0.30 * df,
        };
        let cp = if rng.gen::<f64>() < p_cp4 { 4 } else { 1 + pick(&mut rng, &[0.28, 0.40, 0.32]) };

        // pressure and cholesterol baselines climb with age while the
        // disease offset grows, so absolute decision thresholds drift
        let bp_effect = match group {
            AgeGroup::Young => 4.0,
            AgeGroup::Mid => 10.0,
            AgeGroup::Old => 16.0,
        };
        let trestbps = (normal(&mut rng, 118.0 + 0.30 * (age as f64 - 50.0) + bp_effect * df, 12.0)).round().clamp(94.0, 200.0);

        let chol_effect = match group {
            AgeGroup::Young => 6.0,
            AgeGroup::Mid => 12.0,
            AgeGroup::Old => 28.0,
        };
        let chol = (normal(&mut rng, 225.0 + 0.60 * (age as f64 - 50.0) + chol_effect * df, 40.0)).round().clamp(120.0, 420.0);

        let fbs = bernoulli(&mut rng, 0.10 + 0.08 * df);
        let restecg = pick(&mut rng, &[0.52 - 0.06 * df, 0.44 + 0.04 * df, 0.04 + 0.02 * df]);

        let hr_effect = match group {
            AgeGroup::Young => 6.0,
            AgeGroup::Mid => 5.0,
            AgeGroup::Old => 4.0,
        };
        let thalach = (normal(&mut rng, 172.0 - 0.90 * (age as f64 - 29.0) - hr_effect * df, 14.0)).round().clamp(70.0, 202.0);

        let p_exang = match group {
            AgeGroup::Young => 0.10 + 0.45 * df,
            AgeGroup::Mid => 0.16 + 0.30 * df,
            AgeGroup::Old => 0.40 - 0.15 * df,
        };
        let exang = bernoulli(&mut rng, p_exang);

        let peak_effect = match group {
            AgeGroup::Young => 1.0,
            AgeGroup::Mid => 1.15,
            AgeGroup::Old => 1.3,
        };
        let oldpeak = ((normal(&mut rng, 0.35 + peak_effect * df, 0.65)).max(0.0) * 10.0).round() / 10.0;

        let slope = if d == 1 {
            1 + pick(&mut rng, &[0.22, 0.58, 0.20])
        } else {
            1 + pick(&mut rng, &[0.58, 0.34, 0.08])
        };

        let vessels_effect = match group {
            AgeGroup::Young => 0.38,
            AgeGroup::Mid => 0.48,
            AgeGroup::Old => 0.58,
        };
        let p1 = 0.10 + vessels_effect * df;
        let ca_val = pick(&mut rng, &[1.0 - p1, p1 * 0.55, p1 * 0.30, p1 * 0.15]);
        let ca = if rng.gen::<f64>() < 0.012 { "?".to_string() } else { ca_val.to_string() };

        let p_thal7 = match group {
            AgeGroup::Young => 0.08 + 0.70 * df,
            AgeGroup::Mid => 0.12 + 0.54 * df,
            AgeGroup::Old => 0.20 + 0.32 * df,
        };
        let thal_val = if rng.gen::<f64>() < p_thal7 {
            7
        } else if rng.gen::<f64>() < 0.16 {
            6
        } else {
            3
        };
        let thal = if rng.gen::<f64>() < 0.008 { "?".to_string() } else { thal_val.to_string() };

        let age_cell = if missing_age_rows.contains(&row) { String::new() } else { age.to_string() };
        out.push_str(&format!(
            "{age_cell},{sex},{cp},{trestbps},{chol},{fbs},{restecg},{thalach},{exang},{oldpeak},{slope},{ca},{thal},{num}\n"
        ));
    }
    out
}

/// Schema for the cardiac fixture (and for a real copy of the same layout):
/// age-sliced at 35 and 65, disease level binarized as level > 0.
pub fn heart_schema() -> DatasetSchema {
    let cont = |name: &str| ColumnSpec { name: name.into(), kind: ColumnKind::Continuous, may_miss: false };
    let cat = |name: &str, may_miss: bool| ColumnSpec { name: name.into(), kind: ColumnKind::Categorical, may_miss };
    DatasetSchema {
        name: "heart".into(),
        columns: vec![
            cont("age"),
            cat("sex", false),
            cat("cp", false),
            cont("trestbps"),
            cont("chol"),
            cat("fbs", false),
            cat("restecg", false),
            cont("thalach"),
            cat("exang", false),
            cont("oldpeak"),
            cat("slope", false),
            cat("ca", true),
            cat("thal", true),
        ],
        label: LabelSpec { column: "num".into(), rule: LabelRule::GreaterThanZero },
        n_classes: 2,
        slice: SliceRule { column: "age".into(), boundaries: vec![35.0, 65.0] },
        subsample: None,
        split: SplitRatios::default_ratios(),
    }
}

const CDC_AGE_WEIGHTS: [f64; 13] = [3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.5, 10.5, 10.0, 9.0, 8.0, 6.0, 5.0];

/// Health-indicators-style table: 20 inputs plus a 3-class label
/// (healthy / pre-diabetes / diabetes). Age ships as the ordinal 13-level
/// code of the source survey; the schema buckets codes 1-3 / 4-6 / 7-9 /
/// 10-13 into the four age slices.
///
/// Shift structure: lifestyle features (body mass, activity, diet, smoking)
/// carry the outcome signal in younger cohorts and fade with age, while
/// pressure/cholesterol/general-health dominate in older cohorts. Class
/// prevalence also drifts older (more diabetes).
pub fn cdc_like_csv(seed_value: u64, n_rows: usize) -> String {
    let mut rng = seed::rng(seed_value, &[0xcdc_u64]);
    let mut out = String::from(
        "HighBP,HighChol,CholCheck,BMI,Smoker,Stroke,HeartDiseaseorAttack,PhysActivity,Fruits,Veggies,HvyAlcoholConsump,AnyHealthcare,NoDocbcCost,GenHlth,MentHlth,PhysHlth,DiffWalk,Sex,Age,Education,Diabetes_012\n",
    );
    for _ in 0..n_rows {
        out.push_str(&cdc_row(&mut rng));
    }
    out
}

fn cdc_row(rng: &mut ChaCha8Rng) -> String {
    let age_code = 1 + pick(rng, &CDC_AGE_WEIGHTS);
    let bucket = match age_code {
        1..=3 => 0usize,
        4..=6 => 1,
        7..=9 => 2,
        _ => 3,
    };
    // prevalence drifts older; overall near 74/16/10
    let priors: [f64; 3] = match bucket {
        0 => [0.86, 0.09, 0.05],
        1 => [0.79, 0.13, 0.08],
        2 => [0.71, 0.18, 0.11],
        _ => [0.64, 0.20, 0.16],
    };
    let class = pick(rng, &priors);
    let cf = class as f64; // 0, 1, 2 orders the metabolic severity

    // lifestyle signal strength fades with age; clinical signal grows
    let lifestyle_w = [1.0, 0.75, 0.45, 0.2][bucket];
    let clinical_w = [0.25, 0.55, 0.85, 1.1][bucket];

    let bmi = normal(
        rng,
        26.0 + 0.4 * bucket as f64 + lifestyle_w * (2.9 * cf) + clinical_w * 0.4 * cf,
        4.2,
    )
    .clamp(15.0, 60.0);
    let bmi = (bmi * 10.0).round() / 10.0;

    let sig = |base: f64, eff: f64| -> f64 { (base + eff).clamp(0.01, 0.99) };

    let high_bp = bernoulli(rng, sig(0.18 + 0.09 * bucket as f64, clinical_w * 0.20 * cf));
    let high_chol = bernoulli(rng, sig(0.22 + 0.07 * bucket as f64, clinical_w * 0.16 * cf));
    let chol_check = bernoulli(rng, 0.93 + 0.015 * bucket as f64);
    let smoker = bernoulli(rng, sig(0.38, lifestyle_w * 0.12 * cf));
    let stroke = bernoulli(rng, sig(0.012 + 0.012 * bucket as f64, clinical_w * 0.015 * cf));
    let hd_attack = bernoulli(rng, sig(0.02 + 0.025 * bucket as f64, clinical_w * 0.03 * cf));
    let phys_activity = bernoulli(rng, sig(0.82 - 0.03 * bucket as f64, -lifestyle_w * 0.14 * cf));
    let fruits = bernoulli(rng, sig(0.62, -lifestyle_w * 0.07 * cf));
    let veggies = bernoulli(rng, sig(0.80, -lifestyle_w * 0.05 * cf));
    let hvy_alcohol = bernoulli(rng, sig(0.06, -lifestyle_w * 0.015 * cf));
    let any_healthcare = bernoulli(rng, 0.94);
    let no_doc_cost = bernoulli(rng, sig(0.09, lifestyle_w * 0.02 * cf));

    let gen_hlth = (normal(rng, 2.3 + 0.12 * bucket as f64 + clinical_w * 0.50 * cf, 0.85)
        .round())
    .clamp(1.0, 5.0);
    let ment_hlth = zero_inflated_days(rng, 0.66, 6.0 + cf);
    let phys_hlth = zero_inflated_days(rng, 0.60 - 0.04 * bucket as f64, 5.0 + clinical_w * 2.2 * cf);
    let diff_walk = bernoulli(rng, sig(0.06 + 0.05 * bucket as f64, clinical_w * 0.09 * cf));
    let sex = bernoulli(rng, 0.46);
    let education = 1 + pick(rng, &[0.01, 0.04, 0.10, 0.26, 0.31, 0.28]);

    format!(
        "{high_bp},{high_chol},{chol_check},{bmi},{smoker},{stroke},{hd_attack},{phys_activity},{fruits},{veggies},{hvy_alcohol},{any_healthcare},{no_doc_cost},{gen_hlth},{ment_hlth},{phys_hlth},{diff_walk},{sex},{age_code},{education},{class}\n"
    )
}

fn zero_inflated_days(rng: &mut ChaCha8Rng, p_zero: f64, mean_when_nonzero: f64) -> u32 {
    if rng.gen::<f64>() < p_zero {
        0
    } else {
        (normal(rng, mean_when_nonzero, 6.0).abs().round() as u32).min(30)
    }
}

/// Schema for the health-indicators fixture: four ordinal-age slices
/// (codes 1-3, 4-6, 7-9, 10-13), identity 3-class label.
pub fn cdc_schema() -> DatasetSchema {
    let cont = |name: &str| ColumnSpec { name: name.into(), kind: ColumnKind::Continuous, may_miss: false };
    let cat = |name: &str| ColumnSpec { name: name.into(), kind: ColumnKind::Categorical, may_miss: false };
    DatasetSchema {
        name: "cdc".into(),
        columns: vec![
            cat("HighBP"),
            cat("HighChol"),
            cat("CholCheck"),
            cont("BMI"),
            cat("Smoker"),
            cat("Stroke"),
            cat("HeartDiseaseorAttack"),
            cat("PhysActivity"),
            cat("Fruits"),
            cat("Veggies"),
            cat("HvyAlcoholConsump"),
            cat("AnyHealthcare"),
            cat("NoDocbcCost"),
            cont("GenHlth"),
            cont("MentHlth"),
            cont("PhysHlth"),
            cat("DiffWalk"),
            cat("Sex"),
            cont("Age"),
            cat("Education"),
        ],
        label: LabelSpec { column: "Diabetes_012".into(), rule: LabelRule::Identity },
        n_classes: 3,
        slice: SliceRule { column: "Age".into(), boundaries: vec![4.0, 7.0, 10.0] },
        subsample: None,
        split: SplitRatios::default_ratios(),
    }
}
