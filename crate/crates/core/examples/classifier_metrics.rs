//! Trains the downstream classifier on the generating factors of synthetic
//! data (an upper bound for any learned representation) and reports held-out
//! metrics.
//!
//! Usage: `classifier_metrics [EPOCHS]`

use lighthcg::evaluation::{classification_metrics, train_downstream_classifier, ClassifierConfig};
use lighthcg::scm_synth::{sample_factors, GroundTruthDag};

fn main() -> lighthcg::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let dag = GroundTruthDag::fundus();
    let label = dag.d() - 1;
    let split = |seed| -> lighthcg::Result<_> {
        let t = sample_factors(600, &dag, seed)?;
        let features = t.values.slice(ndarray::s![.., ..label]).to_owned();
        let labels: Vec<u8> = t.values.column(label).iter().map(|&v| u8::from(v > 0.5)).collect();
        Ok((features, labels))
    };
    let (x_train, y_train) = split(1)?;
    let (x_test, y_test) = split(2)?;

    let cfg = ClassifierConfig { epochs, learning_rate: 1e-3, ..Default::default() };
    let clf = train_downstream_classifier(x_train.view(), &y_train, &cfg)?;
    let probs = clf.predict_proba(x_test.view())?;
    let report = classification_metrics(&probs, &y_test, 0.5)?;
    println!("features: {:?}", &dag.names()[..label]);
    println!("final training loss {:.4}\n", clf.loss_history.last().copied().unwrap_or(f64::NAN));
    println!("{}", report.table());
    Ok(())
}
