use e3_net::{Endpoint, Network, Notifier};
use proptest::prelude::*;
use wasm_host::sockets::{Capabilities, SocketTable};

const HOSTS: [&str; 4] = ["agent", "collector", "evil", "127.0.0.1"];

fn endpoint() -> impl Strategy<Value = (usize, u16)> {
    (0..HOSTS.len(), 7000u16..7004)
}

proptest! {
    #[test]
    fn only_granted_endpoints_are_reached(
        grants in prop::collection::vec(endpoint(), 0..4),
        attempts in prop::collection::vec(endpoint(), 1..24),
    ) {
        let net = Network::virtual_channels();
        let mut listeners = Vec::new();
        for h in HOSTS {
            for p in 7000..7004 {
                listeners.push(net.listen(h, p).unwrap());
            }
        }
        let granted: Vec<Endpoint> =
            grants.iter().map(|&(h, p)| Endpoint::new(HOSTS[h], p)).collect();
        let mut table = SocketTable::new(
            Capabilities::new(granted.clone()),
            net.clone(),
            Notifier::new(),
        );
        let mut mem = vec![0u8; 64];
        for &(h, p) in &attempts {
            let name = HOSTS[h].as_bytes();
            mem[..name.len()].copy_from_slice(name);
            let fd = table.connect(&mem, 0, name.len() as u32, p as u32);
            let allowed = granted.contains(&Endpoint::new(HOSTS[h], p));
            prop_assert_eq!(fd >= 3, allowed, "{}:{} -> {}", HOSTS[h], p, fd);
            if !allowed {
                prop_assert_eq!(fd, -13);
            }
        }
        for ep in net.connect_log() {
            prop_assert!(granted.contains(&ep), "reached {}", ep);
        }
        drop(listeners);
    }
}
