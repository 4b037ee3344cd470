/**
 * Local mirror of the master-side foot-pedal clutch.
 *
 * The bridge owns the authoritative clutch; the console keeps this copy
 * so it can display the outgoing setpoint and bound the knob dial
 * without waiting a round trip.  The arithmetic (operation order
 * included) matches the follower package exactly, so folding the same
 * delta stream through both sides yields bit-identical commands.  That
 * only holds while this console is the bridge's sole master-side writer
 * since the server started; the replay fixture test pins the match.
 */

export const FOLLOWER_RANGE_MM = 115.0;
/** The handle track covers about a third of the follower's range. */
export const MASTER_TRAVEL_MM = FOLLOWER_RANGE_MM / 3.0;

export class ClutchState {
  engaged = true;
  masterOffsetMm = 0.0;
  masterOffsetDeg = 0.0;
  masterTravelMm = 0.0;
  rotationInputDeg = 0.0;
  knobDeg = 0.0;
  travelLimitMm = MASTER_TRAVEL_MM;

  /** Back to the virgin state, e.g. after a bridge restart. */
  reset(): void {
    this.engaged = true;
    this.masterOffsetMm = 0.0;
    this.masterOffsetDeg = 0.0;
    this.masterTravelMm = 0.0;
    this.rotationInputDeg = 0.0;
    this.knobDeg = 0.0;
    this.travelLimitMm = MASTER_TRAVEL_MM;
  }

  /** Current outgoing absolute (T mm, R deg, B deg) setpoint. */
  command(): [number, number, number] {
    return [
      this.masterTravelMm - this.masterOffsetMm,
      this.rotationInputDeg - this.masterOffsetDeg,
      this.knobDeg,
    ];
  }

  /** Engage or release the clutch; offsets freeze the command. */
  setPedal(engaged: boolean): void {
    this.engaged = engaged;
  }

  /**
   * Fold one handle increment into the outgoing absolute command.
   *
   * The handle stops at its track ends, so an oversized translation
   * delta is truncated to the physically realizable motion.  While the
   * pedal is disengaged, translation and rotation motion is absorbed
   * into the offsets and the command holds; bending always passes
   * through.
   */
  apply(dMm: number, dDeg: number, dKnob: number): [number, number, number] {
    const newTravel = Math.min(
      Math.max(this.masterTravelMm + dMm, 0.0),
      this.travelLimitMm,
    );
    const movedMm = newTravel - this.masterTravelMm;
    this.masterTravelMm = newTravel;
    this.rotationInputDeg += dDeg;
    this.knobDeg += dKnob;
    if (!this.engaged) {
      this.masterOffsetMm += movedMm;
      this.masterOffsetDeg += dDeg;
    }
    return this.command();
  }
}
