mod common;

use avs_core::backbone::{BackboneConfig, VisualBackbone};
use avs_core::decoder::{Decoder, DecoderConfig};
use avs_core::types::{activate, stage_resolution, TaskSetting};
use avs_core::{ParamStore, Tensor};
use common::{rng, uniform};

#[test]
fn stage_resolutions_halve_from_one_quarter() {
    let bb = VisualBackbone::new(BackboneConfig::desk());
    let mut p = ParamStore::<f32>::new();
    bb.init(&mut p, &mut rng(1));
    for (h, w) in [(64, 64), (96, 96), (224, 224), (64, 96)] {
        let pyr = bb.encode_frames(&p, &Tensor::zeros(&[1, h, w, 3])).unwrap();
        for (i, s) in pyr.stages().iter().enumerate() {
            let c = BackboneConfig::desk().channels[i];
            assert_eq!(s.shape(), &[1, h >> (i + 2), w >> (i + 2), c]);
            assert_eq!(stage_resolution(h, w, i + 1), (h >> (i + 2), w >> (i + 2)));
        }
    }
}

#[test]
fn decoder_output_covers_the_frame() {
    let mut r = rng(2);
    for (k, setting) in [(1usize, TaskSetting::ms3()), (7, TaskSetting::avss(6))] {
        let dec = Decoder::new(DecoderConfig { width: 8 }, k);
        let mut p = ParamStore::<f64>::new();
        dec.init(&mut p, [6; 4], &mut r);
        for (h, w) in [(64, 64), (96, 96), (224, 224)] {
            let t = 2;
            let zs: Vec<Tensor<f64>> = (0..4).map(|i| uniform(&[t, h >> (i + 2), w >> (i + 2), 6], -1.0, 1.0, &mut r)).collect();
            let scores = dec.decode(&p, &zs).unwrap();
            assert_eq!(scores.shape(), &[t, h, w, k]);
            let setting = avs_core::types::TaskSetting { clips_per_video: t, ..setting };
            let (pred, hard) = activate(&scores, &setting).unwrap();
            assert_eq!((hard.clips, hard.height, hard.width), (t, h, w));
            if k > 1 {
                for px in pred.scores.data().chunks(k) {
                    assert!((px.iter().sum::<f64>() - 1.0).abs() < 1e-5);
                }
            }
        }
    }
}

#[test]
fn decoder_wants_four_stages() {
    let dec = Decoder::new(DecoderConfig { width: 4 }, 1);
    let p = ParamStore::<f64>::new();
    let err = dec.decode(&p, &[Tensor::zeros(&[1, 4, 4, 2])]).unwrap_err();
    assert_eq!(err, avs_core::AvsError::StageCount(1));
}
