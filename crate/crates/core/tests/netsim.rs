use proptest::prelude::*;
use sfl_core::model::ModelSpec;
use sfl_core::netsim::{
    actionfed_round, comm_bytes_per_round, round_latency, CostSetting, DeviceWork, Method, NetworkProfile, Speeds,
};
use sfl_core::quant::Quantization;

fn vgg11() -> ModelSpec {
    ModelSpec::vgg11([3, 32, 32], 10)
}

// Device half of VGG11 is conv(3->64) and conv(64->128), 3x3 kernels with bias.
const VGG11_DEVICE_PARAMS: u64 = (3 * 9 * 64 + 64) + (64 * 9 * 128 + 128);
const ACT: u64 = 8 * 8 * 128;
const N: u64 = 10_000;

#[test]
fn split_and_local_loss_rows_by_hand() {
    let setting = CostSetting::cifar10_k5();
    let split = comm_bytes_per_round(Method::VanillaDpfl, &vgg11(), &setting).unwrap();
    let lgl = comm_bytes_per_round(Method::LocalLoss, &vgg11(), &setting).unwrap();
    let aux = ACT * 10 + 10;
    for d in &split.devices {
        assert_eq!(d.up_bytes, 4 * VGG11_DEVICE_PARAMS + 4 * N * ACT + 2 * N);
        assert_eq!(d.down_bytes, 4 * VGG11_DEVICE_PARAMS + 4 * N * ACT);
    }
    for d in &lgl.devices {
        assert_eq!(d.up_bytes, 4 * (VGG11_DEVICE_PARAMS + aux) + 4 * N * ACT + 2 * N);
        assert_eq!(d.down_bytes, 4 * (VGG11_DEVICE_PARAMS + aux));
    }
    assert_eq!(split.devices.len(), 5);
}

#[test]
fn actionfed_rows_by_hand() {
    let setting = CostSetting::cifar10_k5();
    let no_buffer = comm_bytes_per_round(Method::ActionFedNoBuffer, &vgg11(), &setting).unwrap();
    // 100 batches of 100; each record carries a 43-byte rank-4 header, 2-byte labels and 1 byte per element.
    let per_device = 100 * (43 + 2 * 100 + 100 * ACT);
    assert!(no_buffer.devices.iter().all(|d| d.up_bytes == per_device && d.down_bytes == 0));
    let raw = CostSetting { quantization: Quantization::Off, ..setting.clone() };
    let raw = comm_bytes_per_round(Method::ActionFedNoBuffer, &vgg11(), &raw).unwrap();
    assert!(raw.devices.iter().all(|d| d.up_bytes == 2 * N + 4 * N * ACT));
    let buffered = comm_bytes_per_round(Method::ActionFedWithBuffer, &vgg11(), &setting).unwrap();
    assert_eq!(buffered.total_bytes(), 0);
}

#[test]
fn classic_fl_moves_whole_model_both_ways() {
    let setting = CostSetting::cifar10_k5();
    let spec = ModelSpec::parse("mlp", "FC32|FC", [1, 4, 4], 3).unwrap();
    let params = (16 * 32 + 32) + (32 * 3 + 3);
    let fl = comm_bytes_per_round(Method::ClassicFl, &spec, &setting).unwrap();
    assert!(fl.devices.iter().all(|d| d.up_bytes == 4 * params && d.down_bytes == 4 * params));
}

proptest! {
    #[test]
    fn rho_amortizes_to_ceil(t in 1u32..80, rho in 1u32..12) {
        let setting = CostSetting::uniform(2, 37, 10, Quantization::Affine8);
        let spec = ModelSpec::tiny_vgg([1, 8, 8], 2);
        let once = comm_bytes_per_round(Method::ActionFedNoBuffer, &spec, &setting).unwrap().total_bytes();
        let total: u64 = (0..t).map(|r| actionfed_round(&spec, &setting, r, rho).unwrap().total_bytes()).sum();
        prop_assert_eq!(total, t.div_ceil(rho) as u64 * once);
    }
}

fn work(method: Method) -> Vec<DeviceWork> {
    let r = comm_bytes_per_round(method, &vgg11(), &CostSetting::cifar10_k5()).unwrap();
    r.devices.into_iter().map(DeviceWork::from).collect()
}

#[test]
fn slower_links_raise_split_comm_share() {
    let shares: Vec<f64> = NetworkProfile::presets()
        .iter()
        .map(|p| round_latency(&work(Method::VanillaDpfl), Speeds::default(), p).unwrap().comm_share())
        .collect();
    assert!(shares[0] < shares[1] && shares[1] < shares[2], "{shares:?}");
}

#[test]
fn actionfed_beats_split_on_every_profile() {
    for p in NetworkProfile::presets() {
        let split = round_latency(&work(Method::VanillaDpfl), Speeds::default(), &p).unwrap().round_s();
        for m in [Method::ActionFedNoBuffer, Method::ActionFedWithBuffer] {
            let a = round_latency(&work(m), Speeds::default(), &p).unwrap().round_s();
            assert!(a < split, "{} {m}: {a} vs {split}", p.name);
        }
    }
}

#[test]
fn uplink_only_traffic_ignores_downlink_speed() {
    let w = work(Method::ActionFedNoBuffer);
    let a = round_latency(&w, Speeds::default(), &NetworkProfile::new("a", 10.0, 1.0).unwrap()).unwrap();
    let b = round_latency(&w, Speeds::default(), &NetworkProfile::new("b", 10.0, 1000.0).unwrap()).unwrap();
    assert_eq!(a.round_s(), b.round_s());
}
