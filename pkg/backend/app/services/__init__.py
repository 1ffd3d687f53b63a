"""Engine services: registry, compiler, scheduler, simulated lab, optimizer and storage."""
