mod support;

use std::sync::Arc;
use std::time::Duration;

use geomm::perception::{self, ImageInput, MockPerception, RemotePerception};
use geomm::protocol::client::{Address, RemoteEndpoint};
use geomm::protocol::{server, Capability};
use support::{config, fixtures};

fn served_perception() -> Arc<RemoteEndpoint> {
    let others = [Capability::General, Capability::Knowledge, Capability::Reasoning];
    let reg = config().registry().unwrap().without_capabilities(&others);
    let (addr, _server) = server::spawn_loopback(reg).unwrap();
    Arc::new(RemoteEndpoint::new(Address::Tcp(addr.to_string())))
}

#[test]
fn perception_server_lists_its_three_tools() {
    let endpoint = served_perception();
    let mut names: Vec<String> =
        endpoint.list_tools(Duration::from_secs(5)).unwrap().into_iter().map(|d| d.name).collect();
    names.sort();
    assert_eq!(names, ["object_detection", "scene_classification", "semantic_segmentation"]);
}

#[test]
fn remote_backend_matches_the_local_mock() {
    let remote = RemotePerception::new(served_perception(), Duration::from_secs(5));
    let local = MockPerception::load(&fixtures().join("perception.jsonl")).unwrap();

    let planes = ImageInput::load(&fixtures().join("images/planes.png")).unwrap();
    let (far, _) = perception::detect_objects(&planes, &remote).unwrap();
    let (near, _) = perception::detect_objects(&planes, &local).unwrap();
    assert_eq!(far, near);
    assert_eq!(far.count(Some("Plane")).unwrap(), 12);

    let land = ImageInput::load(&fixtures().join("images/landcover.png")).unwrap();
    let mask = perception::segment(&land, &remote).unwrap();
    assert_eq!(mask, perception::segment(&land, &local).unwrap());
    assert_eq!(mask.pixel_count(mask.class_index("water").unwrap()), 60);

    let harbor = ImageInput::load(&fixtures().join("images/harbor.png")).unwrap();
    assert_eq!(
        perception::classify_scene(&harbor, &remote).unwrap(),
        perception::classify_scene(&harbor, &local).unwrap()
    );
}
