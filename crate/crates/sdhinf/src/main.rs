fn main() {
    // CLI wired after the design modules land.
}
