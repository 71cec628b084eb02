use std::path::Path;

use proptest::prelude::*;
use windvis::format::{decode_checkpoint, encode_checkpoint, quantize, Checkpoint};
use windvis::manifest::{read_manifest, write_manifest_to};
use windvis_core::{
    DatasetManifest, LstmConfig, LstmNetwork, ManifestRecord, Rng, SourceTag, Variant,
};

const HEADER: &str = "clip_id,path,label_mps,timestamp_s,source_tag\n";

fn record() -> impl Strategy<Value = ManifestRecord> {
    (
        "[a-z0-9_]{1,8}",
        "[a-z/]{0,12}\\.wanf",
        0.0f64..1e3,
        -1e6f64..1e6,
        prop::sample::select(SourceTag::ALL.to_vec()),
    )
        .prop_map(
            |(clip_id, path, label_mps, timestamp_s, source_tag)| ManifestRecord {
                clip_id,
                path,
                label_mps,
                timestamp_s,
                source_tag,
            },
        )
}

fn row(r: &ManifestRecord) -> String {
    format!(
        "{},{},{},{},{}\n",
        r.clip_id,
        r.path,
        r.label_mps,
        r.timestamp_s,
        r.source_tag.as_str()
    )
}

/// A row that any reader must refuse.
fn broken_row() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("c,p,abc,0,synthetic\n".to_string()),
        Just("c,p,-1,0,synthetic\n".to_string()),
        Just("c,p,NaN,0,synthetic\n".to_string()),
        Just("c,p,1,x,synthetic\n".to_string()),
        Just("c,p,1,0,weather\n".to_string()),
        Just(",p,1,0,synthetic\n".to_string()),
        Just("c,p,1,0\n".to_string()),
        Just("c,p,1,0,synthetic,extra\n".to_string()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn manifest_parsing_is_all_or_nothing(
        records in prop::collection::vec(record(), 0..20),
        broken in prop::option::of((broken_row(), any::<prop::sample::Index>())),
    ) {
        let mut rows: Vec<String> = records.iter().map(row).collect();
        if let Some((bad, at)) = &broken {
            rows.insert(at.index(rows.len() + 1), bad.clone());
        }
        let text = format!("{HEADER}{}", rows.concat());
        let mut ids: Vec<&str> = records.iter().map(|r| r.clip_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        let unique = ids.len() == records.len();
        match read_manifest(text.as_bytes(), Path::new("m.csv")) {
            Ok(m) => {
                prop_assert!(broken.is_none() && unique);
                prop_assert_eq!(m.records(), &records[..]);
            }
            Err(_) => prop_assert!(broken.is_some() || !unique),
        }
    }

    #[test]
    fn manifests_round_trip(records in prop::collection::vec(record(), 0..20)) {
        let mut seen = std::collections::HashSet::new();
        let records: Vec<ManifestRecord> = records.into_iter().filter(|r| seen.insert(r.clip_id.clone())).collect();
        let manifest = DatasetManifest::new(records).unwrap();
        let mut buf = Vec::new();
        write_manifest_to(&mut buf, &manifest, Path::new("m.csv")).unwrap();
        let back = read_manifest(buf.as_slice(), Path::new("m.csv")).unwrap();
        prop_assert_eq!(back, manifest);
    }

    #[test]
    fn arbitrary_text_never_panics(text in "\\PC{0,200}") {
        let _ = read_manifest(format!("{HEADER}{text}").as_bytes(), Path::new("m.csv"));
        let _ = read_manifest(text.as_bytes(), Path::new("m.csv"));
    }

    #[test]
    fn checkpoints_round_trip_quantized(
        seed in any::<u64>(),
        input in 1usize..8,
        hidden in 1usize..8,
        layers in 1usize..4,
        use_bias in any::<bool>(),
        nm in any::<bool>(),
    ) {
        let cfg = LstmConfig { input_size: input, hidden_size: hidden, num_layers: layers, use_bias };
        let network = LstmNetwork::new(cfg, &mut Rng::new(seed)).unwrap();
        let variant = if nm { Variant::Nm } else { Variant::Raw };
        let bytes = encode_checkpoint(&Checkpoint { network: network.clone(), variant }).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        prop_assert_eq!(back.variant, variant);
        prop_assert_eq!(back.network.config(), network.config());
        prop_assert!(back.network == quantize(&network));
        prop_assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
    }

    #[test]
    fn truncated_checkpoints_are_rejected(seed in any::<u64>(), cut in any::<prop::sample::Index>()) {
        let network = LstmNetwork::new(LstmConfig { input_size: 3, hidden_size: 4, num_layers: 2, use_bias: true }, &mut Rng::new(seed)).unwrap();
        let bytes = encode_checkpoint(&Checkpoint { network, variant: Variant::Nm }).unwrap();
        let n = cut.index(bytes.len());
        prop_assert!(decode_checkpoint(&bytes[..n]).is_err());
    }
}
