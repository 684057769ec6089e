mod common;

use geoloc::features::{select_features, SelectOptions};
use geoloc::model::{join_users, predict_all, train_model, TrainConfig};
use geoloc::persist::{load_model, model_from_bytes, model_to_bytes, save_model, MODEL_VERSION};
use geoloc::synth::SyntheticSpec;
use geoloc::Error;

fn trained() -> (geoloc::model::GeoModel, Vec<geoloc::features::UserFeatures>) {
    let mut spec = SyntheticSpec::new(5, 12, 21);
    spec.tau_shift_hours = 6.0;
    spec.cities = common::TWO_CONTINENTS[3..8].iter().map(|s| s.to_string()).collect();
    let p = common::prepare(&spec);
    let users = join_users(&p.features, &p.labels);
    let opts = SelectOptions {
        min_cell_users: 5,
        ..Default::default()
    };
    let vocab = select_features(&users, &geoloc::data::default_stopwords(), &opts)
        .unwrap()
        .vocabulary(200, 20);
    let config = TrainConfig {
        modalities: "words,subreddits,temporal".parse().unwrap(),
        seed: 4,
        ..Default::default()
    };
    let model = train_model(&users, &vocab, &config).unwrap();
    (model, p.features)
}

#[test]
fn round_trip_preserves_predictions() {
    let (model, feats) = trained();
    assert!(model.temporal.is_some());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    save_model(&model, &path).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(back, model);
    assert!(feats.len() >= 50);
    let users = &feats[..50];
    for temporal in [false, true] {
        assert_eq!(predict_all(&model, users, temporal), predict_all(&back, users, temporal));
    }
}

#[test]
fn damaged_files_are_rejected() {
    let (model, _) = trained();
    let bytes = model_to_bytes(&model).unwrap();

    let truncated = &bytes[..bytes.len() - 10];
    assert!(matches!(model_from_bytes(truncated), Err(Error::Checksum)));
    assert!(matches!(model_from_bytes(&bytes[..20]), Err(Error::Checksum)));

    let mut flipped = bytes.clone();
    let i = bytes.len() - 40;
    flipped[i] = if flipped[i] == b'1' { b'2' } else { b'1' };
    assert!(matches!(model_from_bytes(&flipped), Err(Error::Checksum)));

    let text = String::from_utf8(bytes).unwrap();
    let bumped = text.replacen(
        &format!("\"version\":{MODEL_VERSION}"),
        &format!("\"version\":{}", MODEL_VERSION + 1),
        1,
    );
    let err = model_from_bytes(bumped.as_bytes()).unwrap_err();
    assert!(matches!(err, Error::UnsupportedModelVersion { found, .. } if found == MODEL_VERSION + 1));
    assert!(err.to_string().contains("unsupported model version"));
}
