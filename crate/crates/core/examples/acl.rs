// Access control: deny by default, allow rules per subject, `*` or attested
// measurement. Subscribe requests are granted only when a rule's filter
// covers the whole requested filter.

use std::error::Error;

use attested_pubsub::broker::{Acl, AclRule, Action, TopicFilter, TopicName};
use attested_pubsub::handshake::PeerIdentity;

pub fn run() -> Result<(), Box<dyn Error>> {
    let firmware = [0x5e; 32];
    let acl = Acl::new(vec![
        AclRule::allow("sensor-7", Action::Publish, "plant/+/temperature"),
        AclRule::allow("*", Action::Subscribe, "public/#"),
        AclRule::allow(&format!("measurement:{}", hex::encode(firmware)), Action::Subscribe, "plant/#"),
    ])?;
    let sensor = PeerIdentity::new("sensor-7", None, None);
    let operator = PeerIdentity::new("operator", None, Some(firmware));
    let guest = PeerIdentity::new("guest", None, None);

    let t = |s: &str| TopicName::new(s);
    let f = |s: &str| TopicFilter::new(s);
    println!(
        "sensor-7 publish plant/boiler/temperature: {}",
        acl.allows_publish(&sensor, &t("plant/boiler/temperature")?)
    );
    println!("sensor-7 publish plant/boiler/valve:       {}", acl.allows_publish(&sensor, &t("plant/boiler/valve")?));
    println!(
        "operator subscribe plant/+/temperature:    {}",
        acl.allows_subscribe(&operator, &f("plant/+/temperature")?)
    );
    println!("guest    subscribe plant/#:                {}", acl.allows_subscribe(&guest, &f("plant/#")?));
    println!("guest    subscribe public/news:            {}", acl.allows_subscribe(&guest, &f("public/news")?));
    println!("guest    subscribe #:                      {}", acl.allows_subscribe(&guest, &f("#")?));
    println!(
        "anonymous subscribe public/news:           {}",
        acl.allows_subscribe(&PeerIdentity::anonymous(), &f("public/news")?)
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run()
}
