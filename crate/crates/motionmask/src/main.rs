fn main() {
    println!("motionmask");
}
